#include "textseg/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "textseg/error.hpp"

namespace textseg {

AdamWState AdamWState::for_sizes(const std::vector<std::size_t>& sizes) {
  AdamWState s;
  for (auto n : sizes) {
    s.m.emplace_back(n, 0.0);
    s.v.emplace_back(n, 0.0);
  }
  return s;
}

std::vector<std::size_t> AdamWState::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& b : m) out.push_back(b.size());
  return out;
}

void adamw_step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
                AdamWState& state, double lr, double weight_decay) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter, gradient and moment tensor counts differ");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::ConfigInvalid, "learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "weight decay must be >= 0");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != state.m[t].size() ||
        params[t].size() != state.v[t].size()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + std::to_string(t) + " size differs from its gradient");
    }
    for (double g : grads[t]) {
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "tensor " + std::to_string(t));
    }
  }
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      double& theta = params[t][i];
      theta -= lr * (mh / (std::sqrt(vh) + state.eps) + weight_decay * theta);
    }
  }
}

void ScheduleConfig::validate() const {
  if (!(min_lr >= 0.0) || !(base_lr > min_lr)) throw Error(ErrorCode::ConfigInvalid, "need base_lr > min_lr >= 0");
  if (total_epochs < 1) throw Error(ErrorCode::ConfigInvalid, "total_epochs must be >= 1");
  if (cycles < 1) throw Error(ErrorCode::ConfigInvalid, "cycles must be >= 1");
  if (total_epochs % cycles != 0) throw Error(ErrorCode::ConfigInvalid, "cycles must divide total_epochs");
}

double cosine_lr(double epoch, const ScheduleConfig& cfg) {
  cfg.validate();
  if (!(epoch >= 0.0) || epoch > cfg.total_epochs) throw Error(ErrorCode::ConfigInvalid, "epoch outside [0, total]");
  const double len = static_cast<double>(cfg.total_epochs) / cfg.cycles;
  const double cycle = std::min(std::floor(epoch / len), static_cast<double>(cfg.cycles - 1));
  const double phase = epoch - cycle * len;
  return cfg.min_lr + (cfg.base_lr - cfg.min_lr) / 2.0 * (1.0 + std::cos(std::numbers::pi * phase / len));
}

}  // namespace textseg
