#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "textseg/grid.hpp"
#include "textseg/losses.hpp"
#include "textseg/optimizer.hpp"

namespace textseg {

/// Residual head S~ = S + conv1(dropout(relu(IN(conv3(S))))).
/// conv3_w[((o * C + i) * 27) + k] with k = (dz+1)*9 + (dy+1)*3 + (dx+1);
/// conv1_w[o * C + i].
struct RefineParams {
  int channels = 0;
  std::vector<double> conv3_w;
  std::vector<double> conv3_b;
  std::vector<double> in_scale;
  std::vector<double> in_shift;
  std::vector<double> conv1_w;
  std::vector<double> conv1_b;
  double dropout_rate = 0.1;
  double in_eps = 1e-5;

  static RefineParams zeros(int channels);
  /// conv3_w, conv3_b, in_scale, in_shift, conv1_w, conv1_b.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::size_t> sizes() const;
  void validate() const;
  /// crc32 over the parameter bytes; lets a cache detect later edits.
  std::uint32_t fingerprint() const;
  bool operator==(const RefineParams&) const = default;
};

/// Glorot-uniform conv3, identity norm affine, zero projection (so the head
/// starts as the identity on logits).
RefineParams init_refine(int channels, std::uint64_t seed, double dropout_rate = 0.1);

enum class RefineMode { Train, Eval };

/// (x - mean) / sqrt(var + eps) * scale + shift with the biased variance.
/// Throws DegenerateField for fewer than 2 values.
std::vector<double> instance_norm(std::span<const double> x, double scale, double shift, double eps);

struct RefineCache {
  RefineMode mode = RefineMode::Eval;
  std::uint32_t fingerprint = 0;
  LogitTensor input;
  LogitTensor xhat;      // normalized conv3 output
  LogitTensor act;       // after relu
  LogitTensor mask;      // dropout multiplier per element (0 or 1/(1-rate))
  std::vector<double> inv_std;
};

struct RefineResult {
  LogitTensor output;
  RefineCache cache;
};

RefineResult refine_forward(const LogitTensor& S, const RefineParams& p, RefineMode mode, std::uint64_t seed);

struct RefineBackward {
  RefineParams grads;  // dropout_rate / in_eps fields are copied, not gradients
  LogitTensor dinput;
};

/// Throws StaleCache for eval-mode caches or if `p` changed since the forward.
RefineBackward refine_backward(const RefineCache& cache, const RefineParams& p, const LogitTensor& doutput);

struct RefineTrainConfig {
  int epochs = 10;
  int cycles = 1;
  double lr = 5e-4;
  double min_lr = 0.0;
  double weight_decay = 1e-5;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const;
};

struct RefineSample {
  const LogitTensor* logits = nullptr;
  const LabelMap* labels = nullptr;
};

struct RefineTrainResult {
  RefineParams params;
  AdamWState optimizer;
  std::vector<double> epoch_loss;  // mean Dice-Focal per epoch
};

/// Trains only the head with Dice-Focal on softmax(S~). One AdamW step per
/// sample, samples visited in a seeded order, lr annealed per epoch.
RefineTrainResult finetune_refinement(const std::vector<RefineSample>& samples, const RefineTrainConfig& cfg,
                                      const RefineParams* start = nullptr);

void save_refine(const RefineParams& p, const AdamWState& opt, const std::string& path);
RefineParams load_refine(const std::string& path, int expected_channels = -1, AdamWState* opt = nullptr);

}  // namespace textseg
