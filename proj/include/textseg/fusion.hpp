#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "textseg/embedding.hpp"
#include "textseg/grid.hpp"
#include "textseg/losses.hpp"
#include "textseg/optimizer.hpp"

namespace textseg {

inline constexpr std::size_t kHiddenDim = 256;

/// Text-to-Class Bias MLP plus the two global fusion weights.
/// W1 is E x H stored row-major (W1[e * H + j]); W2 is H x C (W2[j * C + c]).
struct FusionParams {
  std::size_t embed_dim = kEmbeddingDim;
  std::size_t hidden_dim = kHiddenDim;
  int classes = kDefaultClasses;
  std::vector<double> W1;
  std::vector<double> b1;
  std::vector<double> W2;
  std::vector<double> b2;
  double alpha = 0.1;
  double beta = 0.1;

  /// All-zero parameters of the given shape (alpha = beta = 0).
  static FusionParams zeros(int classes, std::size_t embed_dim = kEmbeddingDim, std::size_t hidden_dim = kHiddenDim);

  /// W1, b1, W2, b2, alpha, beta in that order.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::size_t> sizes() const;
  void validate() const;
  bool operator==(const FusionParams&) const = default;
};

/// Same layout as FusionParams.
using FusionGradients = FusionParams;

/// Glorot-uniform weights from the seeded stream, zero biases, alpha = beta = 0.1.
FusionParams init_fusion(int classes, std::uint64_t seed, std::size_t embed_dim = kEmbeddingDim,
                         std::size_t hidden_dim = kHiddenDim);

/// b = W2^T relu(W1^T t + b1) + b2.
std::vector<double> class_bias(const FusionParams& p, std::span<const double> t);

/// L_vis + alpha * b (broadcast over voxels) + beta * P. `prior` may be null.
LogitTensor fuse_logits(const LogitTensor& visual, std::span<const double> bias, double alpha, double beta,
                        const LogitTensor* prior);

/// Supervision for one fusion step. Text loss is active when `presence` is
/// non-empty, relation loss when `relations` is non-empty.
struct FusionTargets {
  const LabelMap* labels = nullptr;
  std::vector<std::uint8_t> presence;
  std::vector<RelationRegion> relations;
};

struct FusionStep {
  LossBreakdown loss;
  FusionGradients grads;
};

/// Forward pass and exact gradients of L_total = (Dice + CE) + lambda_text *
/// text + lambda_rel * rel w.r.t. the fusion parameters only.
FusionStep fusion_backward(std::span<const double> t, const LogitTensor& visual, const LogitTensor* prior,
                           const FusionTargets& targets, const LossConfig& cfg, const FusionParams& p);

/// Loss only, sharing the exact arithmetic of fusion_backward.
LossBreakdown fusion_loss(std::span<const double> t, const LogitTensor& visual, const LogitTensor* prior,
                          const FusionTargets& targets, const LossConfig& cfg, const FusionParams& p);

struct FusionCheckpoint {
  FusionParams params;
  std::uint64_t epoch = 0;
  AdamWState optimizer;
  std::string config_hash;
};

void save_checkpoint(const FusionCheckpoint& ckpt, const std::string& path);

/// `expected_classes` < 0 skips the class check; an empty `expected_hash`
/// skips the config check. Throws BadChecksum, ShapeMismatch, ConfigMismatch.
FusionCheckpoint load_checkpoint(const std::string& path, int expected_classes = -1,
                                 const std::string& expected_hash = "");

}  // namespace textseg
