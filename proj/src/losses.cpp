#include "textseg/losses.hpp"

#include <cmath>

#include "textseg/error.hpp"
#include "textseg/tensor_ops.hpp"

namespace textseg {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::ConfigInvalid, "epsilon must be > 0");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "gamma must be >= 0");
  if (!(lambda_text >= 0.0) || !(lambda_rel >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "lambdas must be >= 0");
  if (!(prob_clamp > 0.0 && prob_clamp < 0.5)) throw Error(ErrorCode::ConfigInvalid, "prob_clamp must be in (0, 0.5)");
}

namespace {

void check_pair(const LogitTensor& a, const LogitTensor& b) {
  if (a.channels != b.channels || a.dims != b.dims || a.data.size() != b.data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "probability and ground-truth tensors differ in shape");
  }
}

void check_grad(const LogitTensor& probs, const LogitTensor* dprobs) {
  if (dprobs && (dprobs->channels != probs.channels || dprobs->dims != probs.dims)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient buffer shape differs from probabilities");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double dice_loss(const LogitTensor& probs, const LogitTensor& gt, double eps, LogitTensor* dprobs, double weight) {
  check_pair(probs, gt);
  check_grad(probs, dprobs);
  const int C = probs.channels;
  const std::size_t n = probs.dims.voxels();
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    const auto p = probs.channel(c);
    const auto g = gt.channel(c);
    double inter = 0.0;
    double pp = 0.0;
    double gg = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      inter += p[v] * g[v];
      pp += p[v] * p[v];
      gg += g[v] * g[v];
    }
    const double num = 2.0 * inter + eps;
    const double den = pp + gg + eps;
    total += 1.0 - num / den;
    if (dprobs) {
      auto d = dprobs->channel(c);
      const double scale = weight / static_cast<double>(C) / (den * den);
      for (std::size_t v = 0; v < n; ++v) d[v] -= scale * (2.0 * g[v] * den - num * 2.0 * p[v]);
    }
  }
  return total / static_cast<double>(C);
}

double cross_entropy(const LogitTensor& probs, const LogitTensor& gt, double clamp, LogitTensor* dprobs,
                     double weight) {
  check_pair(probs, gt);
  check_grad(probs, dprobs);
  const std::size_t n = probs.dims.voxels();
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (int c = 0; c < probs.channels; ++c) {
    const auto p = probs.channel(c);
    const auto g = gt.channel(c);
    for (std::size_t v = 0; v < n; ++v) {
      if (g[v] == 0.0) continue;
      const bool clamped = !(p[v] > clamp);
      sum -= g[v] * std::log(clamped ? clamp : p[v]);
      if (dprobs && !clamped) dprobs->at(c, v) -= weight * inv_n * g[v] / p[v];
    }
  }
  return sum * inv_n;
}

double focal_loss(const LogitTensor& probs, const LogitTensor& gt, double gamma, double clamp, LogitTensor* dprobs,
                  double weight) {
  check_pair(probs, gt);
  check_grad(probs, dprobs);
  const std::size_t n = probs.dims.voxels();
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (int c = 0; c < probs.channels; ++c) {
    const auto p = probs.channel(c);
    const auto g = gt.channel(c);
    for (std::size_t v = 0; v < n; ++v) {
      if (g[v] == 0.0) continue;
      const bool clamped = !(p[v] > clamp);
      const double logp = std::log(clamped ? clamp : p[v]);
      const double q = 1.0 - p[v];
      const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
      sum -= mod * g[v] * logp;
      if (dprobs) {
        // d/dp of -(1-p)^gamma log p
        double dmod = 0.0;
        if (gamma != 0.0 && q > 0.0) dmod = -gamma * std::pow(q, gamma - 1.0);
        const double dlog = clamped ? 0.0 : 1.0 / p[v];
        dprobs->at(c, v) -= weight * inv_n * g[v] * (dmod * logp + mod * dlog);
      }
    }
  }
  return sum * inv_n;
}

double dice_focal(const LogitTensor& probs, const LogitTensor& gt, const LossConfig& cfg, LogitTensor* dprobs,
                  double weight) {
  return dice_loss(probs, gt, cfg.epsilon, dprobs, weight) +
         focal_loss(probs, gt, cfg.gamma, cfg.prob_clamp, dprobs, weight);
}

double dice_ce(const LogitTensor& probs, const LogitTensor& gt, const LossConfig& cfg, LogitTensor* dprobs,
               double weight) {
  return dice_loss(probs, gt, cfg.epsilon, dprobs, weight) + cross_entropy(probs, gt, cfg.prob_clamp, dprobs, weight);
}

double text_alignment_loss(std::span<const double> bias, std::span<const std::uint8_t> presence, double clamp,
                           std::vector<double>* dbias, double weight) {
  if (bias.size() != presence.size()) throw Error(ErrorCode::LengthMismatch, "bias and presence lengths differ");
  if (bias.size() < 2) throw Error(ErrorCode::LengthMismatch, "need at least one foreground class");
  if (dbias && dbias->size() != bias.size()) throw Error(ErrorCode::LengthMismatch, "gradient buffer length");
  const double inv = 1.0 / static_cast<double>(bias.size() - 1);
  double sum = 0.0;
  for (std::size_t c = 1; c < bias.size(); ++c) {
    const double s = sigmoid(bias[c]);
    const double one_minus = sigmoid(-bias[c]);
    if (presence[c]) {
      const bool clamped = !(s > clamp);
      sum -= std::log(clamped ? clamp : s);
      if (dbias && !clamped) (*dbias)[c] -= weight * inv * one_minus;
    } else {
      const bool clamped = !(one_minus > clamp);
      sum -= std::log(clamped ? clamp : one_minus);
      if (dbias && !clamped) (*dbias)[c] += weight * inv * s;
    }
  }
  return sum * inv;
}

double relation_loss_from_probs(const LogitTensor& probs, const std::vector<RelationRegion>& relations,
                                const LabelMap& gt, double clamp, LogitTensor* dprobs, double weight) {
  check_grad(probs, dprobs);
  const std::size_t n = probs.dims.voxels();
  if (gt.dims != probs.dims) throw Error(ErrorCode::ShapeMismatch, "ground truth dims differ from logits");
  std::size_t active = 0;
  for (const auto& r : relations) {
    if (r.field.size() != n) throw Error(ErrorCode::ShapeMismatch, "relation field size differs from logits");
    if (r.target < 0 || r.target >= probs.channels) throw Error(ErrorCode::ShapeMismatch, "relation target channel");
    for (double f : r.field) {
      if (f > 0.0) {
        ++active;
        break;
      }
    }
  }
  if (active == 0) return 0.0;
  const double inv_r = 1.0 / static_cast<double>(active);

  double total = 0.0;
  for (const auto& r : relations) {
    std::size_t region = 0;
    for (double f : r.field) region += f > 0.0;
    if (region == 0) continue;
    const double inv_region = 1.0 / static_cast<double>(region);
    const auto q = probs.channel(r.target);
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (!(r.field[v] > 0.0)) continue;
      if (gt.data[v] == r.target) {
        const bool clamped = !(q[v] > clamp);
        sum -= std::log(clamped ? clamp : q[v]);
        if (dprobs && !clamped) dprobs->at(r.target, v) -= weight * inv_r * inv_region / q[v];
      } else {
        const double rest = 1.0 - q[v];
        const bool clamped = !(rest > clamp);
        sum -= std::log(clamped ? clamp : rest);
        if (dprobs && !clamped) dprobs->at(r.target, v) += weight * inv_r * inv_region / rest;
      }
    }
    total += sum * inv_region;
  }
  return total * inv_r;
}

double relation_loss(const LogitTensor& fused_logits, const std::vector<RelationRegion>& relations, const LabelMap& gt,
                     double clamp) {
  return relation_loss_from_probs(softmax_channels(fused_logits), relations, gt, clamp);
}

LossBreakdown total_fusion_loss(const LossBreakdown& parts, const LossConfig& cfg) {
  LossBreakdown out = parts;
  out.total = parts.seg + cfg.lambda_text * parts.text + cfg.lambda_rel * parts.rel;
  return out;
}

LogitTensor softmax_backward(const LogitTensor& probs, const LogitTensor& dprobs) {
  check_pair(probs, dprobs);
  LogitTensor out(probs.channels, probs.dims, probs.spacing);
  const std::size_t n = probs.dims.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    double dot = 0.0;
    for (int c = 0; c < probs.channels; ++c) dot += probs.at(c, v) * dprobs.at(c, v);
    for (int c = 0; c < probs.channels; ++c) out.at(c, v) = probs.at(c, v) * (dprobs.at(c, v) - dot);
  }
  return out;
}

}  // namespace textseg
