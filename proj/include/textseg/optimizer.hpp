#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace textseg {

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zeroed moment buffers matching the given tensor sizes.
  static AdamWState for_sizes(const std::vector<std::size_t>& sizes);
  std::vector<std::size_t> sizes() const;
};

/// One decoupled-weight-decay Adam step over a list of parameter tensors.
/// Gradients are checked for finiteness before anything is modified.
void adamw_step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
                AdamWState& state, double lr, double weight_decay);

struct ScheduleConfig {
  double base_lr = 2e-3;
  double min_lr = 0.0;
  int total_epochs = 20;
  int cycles = 1;

  void validate() const;
};

/// Cosine annealing, restarted every total_epochs / cycles epochs. The last
/// cycle runs through epoch == total_epochs, which yields min_lr.
double cosine_lr(double epoch, const ScheduleConfig& cfg);

}  // namespace textseg
