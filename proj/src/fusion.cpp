#include "textseg/fusion.hpp"

#include <cmath>

#include "textseg/error.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor_file.hpp"
#include "textseg/tensor_ops.hpp"

namespace textseg {

FusionParams FusionParams::zeros(int classes, std::size_t embed_dim, std::size_t hidden_dim) {
  if (classes < 2) throw Error(ErrorCode::ConfigInvalid, "need at least 2 classes");
  if (embed_dim == 0 || hidden_dim == 0) throw Error(ErrorCode::ConfigInvalid, "embedding and hidden dims must be > 0");
  FusionParams p;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  p.classes = classes;
  const auto C = static_cast<std::size_t>(classes);
  p.W1.assign(embed_dim * hidden_dim, 0.0);
  p.b1.assign(hidden_dim, 0.0);
  p.W2.assign(hidden_dim * C, 0.0);
  p.b2.assign(C, 0.0);
  p.alpha = 0.0;
  p.beta = 0.0;
  return p;
}

std::vector<std::span<double>> FusionParams::tensors() {
  return {W1, b1, W2, b2, std::span<double>(&alpha, 1), std::span<double>(&beta, 1)};
}

std::vector<std::span<const double>> FusionParams::tensors() const {
  return {W1, b1, W2, b2, std::span<const double>(&alpha, 1), std::span<const double>(&beta, 1)};
}

std::vector<std::size_t> FusionParams::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& t : tensors()) out.push_back(t.size());
  return out;
}

void FusionParams::validate() const {
  const auto C = static_cast<std::size_t>(classes);
  if (classes < 2 || W1.size() != embed_dim * hidden_dim || b1.size() != hidden_dim || W2.size() != hidden_dim * C ||
      b2.size() != C) {
    throw Error(ErrorCode::ShapeMismatch, "fusion parameter shapes inconsistent");
  }
  for (const auto& t : tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, "fusion parameters contain non-finite values");
    }
  }
}

FusionParams init_fusion(int classes, std::uint64_t seed, std::size_t embed_dim, std::size_t hidden_dim) {
  auto p = FusionParams::zeros(classes, embed_dim, hidden_dim);
  Rng rng(seed);
  const double r1 = std::sqrt(6.0 / static_cast<double>(embed_dim + hidden_dim));
  for (auto& w : p.W1) w = rng.uniform(-r1, r1);
  const double r2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + static_cast<std::size_t>(classes)));
  for (auto& w : p.W2) w = rng.uniform(-r2, r2);
  p.alpha = 0.1;
  p.beta = 0.1;
  return p;
}

namespace {

struct BiasForward {
  std::vector<double> pre;  // W1^T t + b1
  std::vector<double> hidden;
  std::vector<double> bias;
};

BiasForward bias_forward(const FusionParams& p, std::span<const double> t) {
  if (t.size() != p.embed_dim) {
    throw Error(ErrorCode::ShapeMismatch, "embedding length " + std::to_string(t.size()) + ", expected " +
                                              std::to_string(p.embed_dim));
  }
  const std::size_t H = p.hidden_dim;
  const auto C = static_cast<std::size_t>(p.classes);
  BiasForward f;
  f.pre = p.b1;
  for (std::size_t e = 0; e < p.embed_dim; ++e) {
    const double te = t[e];
    if (te == 0.0) continue;
    const double* row = p.W1.data() + e * H;
    for (std::size_t j = 0; j < H; ++j) f.pre[j] += row[j] * te;
  }
  f.hidden.resize(H);
  for (std::size_t j = 0; j < H; ++j) f.hidden[j] = f.pre[j] > 0.0 ? f.pre[j] : 0.0;
  f.bias = p.b2;
  for (std::size_t j = 0; j < H; ++j) {
    const double hj = f.hidden[j];
    if (hj == 0.0) continue;
    const double* row = p.W2.data() + j * C;
    for (std::size_t c = 0; c < C; ++c) f.bias[c] += row[c] * hj;
  }
  return f;
}

void check_inputs(const LogitTensor& visual, const LogitTensor* prior, const FusionTargets& targets,
                  const FusionParams& p) {
  if (visual.channels != p.classes) throw Error(ErrorCode::ShapeMismatch, "visual logits channel count differs");
  if (prior && (prior->channels != visual.channels || prior->dims != visual.dims)) {
    throw Error(ErrorCode::ShapeMismatch, "prior tensor shape differs from visual logits");
  }
  if (!targets.labels) throw Error(ErrorCode::ShapeMismatch, "fusion targets need a label map");
  if (targets.labels->dims != visual.dims) throw Error(ErrorCode::ShapeMismatch, "label map dims differ from logits");
  if (!targets.presence.empty() && targets.presence.size() != static_cast<std::size_t>(p.classes)) {
    throw Error(ErrorCode::ShapeMismatch, "presence vector length differs from class count");
  }
}

FusionStep run(std::span<const double> t, const LogitTensor& visual, const LogitTensor* prior,
               const FusionTargets& targets, const LossConfig& cfg, const FusionParams& p, bool want_grads) {
  cfg.validate();
  check_inputs(visual, prior, targets, p);
  const auto fwd = bias_forward(p, t);
  const auto fused = fuse_logits(visual, fwd.bias, p.alpha, p.beta, prior);
  const auto probs = softmax_channels(fused);
  const auto gt = one_hot(*targets.labels, p.classes);

  FusionStep out;
  LogitTensor dprobs;
  if (want_grads) dprobs = LogitTensor(probs.channels, probs.dims, probs.spacing);
  LogitTensor* dp = want_grads ? &dprobs : nullptr;

  LossBreakdown& L = out.loss;
  L.dice = dice_loss(probs, gt, cfg.epsilon, dp, 1.0);
  L.ce = cross_entropy(probs, gt, cfg.prob_clamp, dp, 1.0);
  L.seg = L.dice + L.ce;
  const auto C = static_cast<std::size_t>(p.classes);
  std::vector<double> dbias(C, 0.0);
  if (!targets.presence.empty()) {
    L.text = text_alignment_loss(fwd.bias, targets.presence, cfg.prob_clamp, want_grads ? &dbias : nullptr,
                                 cfg.lambda_text);
  }
  if (!targets.relations.empty()) {
    L.rel = relation_loss_from_probs(probs, targets.relations, *targets.labels, cfg.prob_clamp, dp, cfg.lambda_rel);
  }
  L = total_fusion_loss(L, cfg);
  if (!std::isfinite(L.total)) throw Error(ErrorCode::NonFiniteLoss, "fusion loss is not finite");
  if (!want_grads) return out;

  const auto dF = softmax_backward(probs, dprobs);
  auto& g = out.grads;
  g = FusionParams::zeros(p.classes, p.embed_dim, p.hidden_dim);
  const std::size_t n = visual.dims.voxels();
  for (std::size_t c = 0; c < C; ++c) {
    const auto ch = dF.channel(static_cast<int>(c));
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) sum += ch[v];
    g.alpha += fwd.bias[c] * sum;
    dbias[c] += p.alpha * sum;
    if (prior) {
      const auto pc = prior->channel(static_cast<int>(c));
      double s = 0.0;
      for (std::size_t v = 0; v < n; ++v) s += ch[v] * pc[v];
      g.beta += s;
    }
  }
  g.b2 = dbias;
  const std::size_t H = p.hidden_dim;
  std::vector<double> dpre(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    double dh = 0.0;
    const double* row = p.W2.data() + j * C;
    double* grow = g.W2.data() + j * C;
    for (std::size_t c = 0; c < C; ++c) {
      grow[c] = fwd.hidden[j] * dbias[c];
      dh += row[c] * dbias[c];
    }
    dpre[j] = fwd.pre[j] > 0.0 ? dh : 0.0;
  }
  g.b1 = dpre;
  for (std::size_t e = 0; e < p.embed_dim; ++e) {
    double* grow = g.W1.data() + e * H;
    for (std::size_t j = 0; j < H; ++j) grow[j] = t[e] * dpre[j];
  }
  return out;
}

}  // namespace

std::vector<double> class_bias(const FusionParams& p, std::span<const double> t) { return bias_forward(p, t).bias; }

LogitTensor fuse_logits(const LogitTensor& visual, std::span<const double> bias, double alpha, double beta,
                        const LogitTensor* prior) {
  if (bias.size() != static_cast<std::size_t>(visual.channels)) {
    throw Error(ErrorCode::ShapeMismatch, "bias length differs from channel count");
  }
  if (prior && (prior->channels != visual.channels || prior->dims != visual.dims)) {
    throw Error(ErrorCode::ShapeMismatch, "prior tensor shape differs from visual logits");
  }
  LogitTensor out = visual;
  const std::size_t n = visual.dims.voxels();
  for (int c = 0; c < visual.channels; ++c) {
    auto ch = out.channel(c);
    const double shift = alpha * bias[static_cast<std::size_t>(c)];
    if (shift != 0.0) {
      for (std::size_t v = 0; v < n; ++v) ch[v] += shift;
    }
    if (prior && beta != 0.0) {
      const auto pc = prior->channel(c);
      for (std::size_t v = 0; v < n; ++v) ch[v] += beta * pc[v];
    }
  }
  return out;
}

FusionStep fusion_backward(std::span<const double> t, const LogitTensor& visual, const LogitTensor* prior,
                           const FusionTargets& targets, const LossConfig& cfg, const FusionParams& p) {
  return run(t, visual, prior, targets, cfg, p, true);
}

LossBreakdown fusion_loss(std::span<const double> t, const LogitTensor& visual, const LogitTensor* prior,
                          const FusionTargets& targets, const LossConfig& cfg, const FusionParams& p) {
  return run(t, visual, prior, targets, cfg, p, false).loss;
}

void save_checkpoint(const FusionCheckpoint& ckpt, const std::string& path) {
  ckpt.params.validate();
  const auto sizes = ckpt.params.sizes();
  if (!ckpt.optimizer.m.empty() && ckpt.optimizer.sizes() != sizes) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter shapes");
  }
  TensorFile f;
  f.header.add("kind", "fusion");
  f.header.add("classes", std::to_string(ckpt.params.classes));
  f.header.add("embed_dim", std::to_string(ckpt.params.embed_dim));
  f.header.add("hidden_dim", std::to_string(ckpt.params.hidden_dim));
  f.header.add("epoch", std::to_string(ckpt.epoch));
  f.header.add("step", std::to_string(ckpt.optimizer.step));
  f.header.add("beta1", format_double(ckpt.optimizer.beta1));
  f.header.add("beta2", format_double(ckpt.optimizer.beta2));
  f.header.add("eps", format_double(ckpt.optimizer.eps));
  f.header.add("has_moments", ckpt.optimizer.m.empty() ? "0" : "1");
  f.header.add("config_hash", ckpt.config_hash);
  for (const auto& t : ckpt.params.tensors()) f.tensors.emplace_back(t.begin(), t.end());
  for (const auto& m : ckpt.optimizer.m) f.tensors.push_back(m);
  for (const auto& v : ckpt.optimizer.v) f.tensors.push_back(v);
  save_tensor_file(path, f);
}

FusionCheckpoint load_checkpoint(const std::string& path, int expected_classes, const std::string& expected_hash) {
  auto f = load_tensor_file(path);
  const auto& h = f.header;
  FusionCheckpoint ck;
  try {
    if (h.get("kind") != "fusion") throw Error(ErrorCode::BadCheckpoint, path + ": not a fusion checkpoint");
    const int classes = static_cast<int>(h.get_int("classes"));
    if (expected_classes >= 0 && classes != expected_classes) {
      throw Error(ErrorCode::ShapeMismatch, path + ": checkpoint has C=" + std::to_string(classes) + ", run expects C=" +
                                                std::to_string(expected_classes));
    }
    ck.params = FusionParams::zeros(classes, static_cast<std::size_t>(h.get_int("embed_dim")),
                                    static_cast<std::size_t>(h.get_int("hidden_dim")));
    ck.epoch = static_cast<std::uint64_t>(h.get_int("epoch"));
    ck.config_hash = h.get("config_hash");
    ck.optimizer.step = static_cast<std::uint64_t>(h.get_int("step"));
    ck.optimizer.beta1 = h.get_double("beta1");
    ck.optimizer.beta2 = h.get_double("beta2");
    ck.optimizer.eps = h.get_double("eps");
    const bool moments = h.get_int("has_moments") != 0;
    const auto sizes = ck.params.sizes();
    const std::size_t want = sizes.size() * (moments ? 3 : 1);
    if (f.tensors.size() != want) throw Error(ErrorCode::ShapeMismatch, path + ": unexpected tensor count");
    auto dst = ck.params.tensors();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (f.tensors[i].size() != sizes[i]) throw Error(ErrorCode::ShapeMismatch, path + ": tensor size mismatch");
      std::copy(f.tensors[i].begin(), f.tensors[i].end(), dst[i].begin());
    }
    if (moments) {
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (f.tensors[sizes.size() + i].size() != sizes[i] || f.tensors[2 * sizes.size() + i].size() != sizes[i]) {
          throw Error(ErrorCode::ShapeMismatch, path + ": moment buffer size mismatch");
        }
        ck.optimizer.m.push_back(std::move(f.tensors[sizes.size() + i]));
        ck.optimizer.v.push_back(std::move(f.tensors[2 * sizes.size() + i]));
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::KeyNotFound || e.code() == ErrorCode::ConfigInvalid) {
      throw Error(ErrorCode::BadCheckpoint, path + ": " + e.what());
    }
    throw;
  }
  if (!expected_hash.empty() && ck.config_hash != expected_hash) {
    throw Error(ErrorCode::ConfigMismatch, path + ": config hash " + ck.config_hash + " differs from " + expected_hash);
  }
  ck.params.validate();
  return ck;
}

}  // namespace textseg
