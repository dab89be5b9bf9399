#include "textseg/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor_file.hpp"
#include "textseg/tensor_ops.hpp"

namespace textseg {

RefineParams RefineParams::zeros(int channels) {
  if (channels < 1) throw Error(ErrorCode::ConfigInvalid, "refinement head needs >= 1 channel");
  const auto C = static_cast<std::size_t>(channels);
  RefineParams p;
  p.channels = channels;
  p.conv3_w.assign(C * C * 27, 0.0);
  p.conv3_b.assign(C, 0.0);
  p.in_scale.assign(C, 0.0);
  p.in_shift.assign(C, 0.0);
  p.conv1_w.assign(C * C, 0.0);
  p.conv1_b.assign(C, 0.0);
  return p;
}

std::vector<std::span<double>> RefineParams::tensors() {
  return {conv3_w, conv3_b, in_scale, in_shift, conv1_w, conv1_b};
}

std::vector<std::span<const double>> RefineParams::tensors() const {
  return {conv3_w, conv3_b, in_scale, in_shift, conv1_w, conv1_b};
}

std::vector<std::size_t> RefineParams::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& t : tensors()) out.push_back(t.size());
  return out;
}

void RefineParams::validate() const {
  const auto C = static_cast<std::size_t>(channels);
  if (channels < 1 || conv3_w.size() != C * C * 27 || conv3_b.size() != C || in_scale.size() != C ||
      in_shift.size() != C || conv1_w.size() != C * C || conv1_b.size() != C) {
    throw Error(ErrorCode::ShapeMismatch, "refinement parameter shapes inconsistent");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorCode::ConfigInvalid, "dropout rate not in [0, 1)");
  if (!(in_eps > 0.0)) throw Error(ErrorCode::ConfigInvalid, "instance-norm eps must be > 0");
  for (const auto& t : tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, "refinement parameters contain non-finite values");
    }
  }
}

std::uint32_t RefineParams::fingerprint() const {
  std::vector<std::uint8_t> bytes;
  for (const auto& t : tensors()) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(t.data());
    bytes.insert(bytes.end(), b, b + t.size() * sizeof(double));
  }
  const auto* r = reinterpret_cast<const std::uint8_t*>(&dropout_rate);
  bytes.insert(bytes.end(), r, r + sizeof(double));
  const auto* e = reinterpret_cast<const std::uint8_t*>(&in_eps);
  bytes.insert(bytes.end(), e, e + sizeof(double));
  return crc32_of(bytes);
}

RefineParams init_refine(int channels, std::uint64_t seed, double dropout_rate) {
  auto p = RefineParams::zeros(channels);
  p.dropout_rate = dropout_rate;
  Rng rng(seed);
  const double fan = 27.0 * channels;
  const double r = std::sqrt(6.0 / (fan + fan));
  for (auto& w : p.conv3_w) w = rng.uniform(-r, r);
  std::fill(p.in_scale.begin(), p.in_scale.end(), 1.0);
  p.validate();
  return p;
}

std::vector<double> instance_norm(std::span<const double> x, double scale, double shift, double eps) {
  if (x.size() < 2) throw Error(ErrorCode::DegenerateField, "instance norm needs at least 2 voxels");
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * scale + shift;
  return out;
}

namespace {

struct Range {
  std::size_t lo;
  std::size_t hi;
};

/// Output positions p with 0 <= p + off < n.
Range valid(std::size_t n, int off) {
  const auto lo = static_cast<std::size_t>(std::max(0, -off));
  const auto hi = static_cast<std::size_t>(std::max<long>(0, static_cast<long>(n) - std::max(0, off)));
  return {lo, std::max(lo, hi)};
}

/// out[z,y,x] += w * in[z+dz, y+dy, x+dx] over the valid range.
void shifted_axpy(std::span<double> out, std::span<const double> in, const Dims& d, int dz, int dy, int dx, double w) {
  const Range rz = valid(d.d, dz);
  const Range ry = valid(d.h, dy);
  const Range rx = valid(d.w, dx);
  for (std::size_t z = rz.lo; z < rz.hi; ++z) {
    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
      double* o = out.data() + d.index(z, y, 0);
      const double* s = in.data() + d.index(z + dz, y + dy, 0);
      for (std::size_t x = rx.lo; x < rx.hi; ++x) o[x] += w * s[x + dx];
    }
  }
}

/// sum over the valid range of a[z,y,x] * b[z+dz, y+dy, x+dx].
double shifted_dot(std::span<const double> a, std::span<const double> b, const Dims& d, int dz, int dy, int dx) {
  const Range rz = valid(d.d, dz);
  const Range ry = valid(d.h, dy);
  const Range rx = valid(d.w, dx);
  double sum = 0.0;
  for (std::size_t z = rz.lo; z < rz.hi; ++z) {
    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
      const double* p = a.data() + d.index(z, y, 0);
      const double* q = b.data() + d.index(z + dz, y + dy, 0);
      for (std::size_t x = rx.lo; x < rx.hi; ++x) sum += p[x] * q[x + dx];
    }
  }
  return sum;
}

constexpr int kz(int k) { return k / 9 - 1; }
constexpr int ky(int k) { return (k / 3) % 3 - 1; }
constexpr int kx(int k) { return k % 3 - 1; }

}  // namespace

RefineResult refine_forward(const LogitTensor& S, const RefineParams& p, RefineMode mode, std::uint64_t seed) {
  p.validate();
  if (S.channels != p.channels) throw Error(ErrorCode::ShapeMismatch, "logit channels differ from head channels");
  const int C = p.channels;
  const std::size_t n = S.dims.voxels();
  if (n < 2) throw Error(ErrorCode::DegenerateField, "instance norm needs at least 2 voxels");

  RefineResult res;
  RefineCache& cache = res.cache;
  cache.mode = mode;
  cache.fingerprint = p.fingerprint();
  cache.input = S;
  cache.xhat = LogitTensor(C, S.dims, S.spacing);
  cache.act = LogitTensor(C, S.dims, S.spacing);
  cache.mask = LogitTensor(C, S.dims, S.spacing, 1.0);
  cache.inv_std.assign(static_cast<std::size_t>(C), 0.0);

  LogitTensor conv(C, S.dims, S.spacing);
  for (int o = 0; o < C; ++o) {
    auto out = conv.channel(o);
    std::fill(out.begin(), out.end(), p.conv3_b[static_cast<std::size_t>(o)]);
    for (int i = 0; i < C; ++i) {
      const auto in = S.channel(i);
      for (int k = 0; k < 27; ++k) {
        const double w = p.conv3_w[(static_cast<std::size_t>(o) * C + i) * 27 + k];
        if (w != 0.0) shifted_axpy(out, in, S.dims, kz(k), ky(k), kx(k), w);
      }
    }
  }

  Rng rng(seed);
  const bool drop = mode == RefineMode::Train && p.dropout_rate > 0.0;
  const double keep_scale = 1.0 / (1.0 - p.dropout_rate);
  for (int c = 0; c < C; ++c) {
    const auto y = conv.channel(c);
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + p.in_eps);
    cache.inv_std[static_cast<std::size_t>(c)] = inv;
    auto xh = cache.xhat.channel(c);
    auto a = cache.act.channel(c);
    auto m = cache.mask.channel(c);
    const double sc = p.in_scale[static_cast<std::size_t>(c)];
    const double sh = p.in_shift[static_cast<std::size_t>(c)];
    for (std::size_t v = 0; v < n; ++v) {
      xh[v] = (y[v] - mean) * inv;
      const double zn = xh[v] * sc + sh;
      a[v] = zn > 0.0 ? zn : 0.0;
      if (drop) m[v] = rng.uniform() < p.dropout_rate ? 0.0 : keep_scale;
    }
  }

  res.output = S;
  for (int o = 0; o < C; ++o) {
    auto out = res.output.channel(o);
    const double b = p.conv1_b[static_cast<std::size_t>(o)];
    for (int i = 0; i < C; ++i) {
      const double w = p.conv1_w[static_cast<std::size_t>(o) * C + i];
      if (w == 0.0) continue;
      const auto a = cache.act.channel(i);
      const auto m = cache.mask.channel(i);
      for (std::size_t v = 0; v < n; ++v) out[v] += w * (a[v] * m[v]);
    }
    if (b != 0.0) {
      for (std::size_t v = 0; v < n; ++v) out[v] += b;
    }
  }
  return res;
}

RefineBackward refine_backward(const RefineCache& cache, const RefineParams& p, const LogitTensor& g) {
  if (cache.mode != RefineMode::Train) throw Error(ErrorCode::StaleCache, "backward needs a train-mode forward cache");
  if (cache.fingerprint != p.fingerprint()) throw Error(ErrorCode::StaleCache, "parameters changed since the forward");
  const int C = p.channels;
  const auto& S = cache.input;
  if (g.channels != C || g.dims != S.dims) throw Error(ErrorCode::ShapeMismatch, "upstream gradient shape differs");
  const std::size_t n = S.dims.voxels();
  const auto Cs = static_cast<std::size_t>(C);

  RefineBackward out;
  out.grads = RefineParams::zeros(C);
  out.grads.dropout_rate = p.dropout_rate;
  out.grads.in_eps = p.in_eps;
  auto& gr = out.grads;
  out.dinput = g;

  // conv1 and dropout
  LogitTensor dact(C, S.dims, S.spacing);
  std::vector<double> dropped(n);
  for (int i = 0; i < C; ++i) {
    const auto a = cache.act.channel(i);
    const auto m = cache.mask.channel(i);
    for (std::size_t v = 0; v < n; ++v) dropped[v] = a[v] * m[v];
    for (int o = 0; o < C; ++o) {
      const auto go = g.channel(o);
      double s = 0.0;
      for (std::size_t v = 0; v < n; ++v) s += go[v] * dropped[v];
      gr.conv1_w[static_cast<std::size_t>(o) * Cs + i] = s;
    }
  }
  for (int o = 0; o < C; ++o) {
    const auto go = g.channel(o);
    double s = 0.0;
    for (double v : go) s += v;
    gr.conv1_b[static_cast<std::size_t>(o)] = s;
  }
  for (int i = 0; i < C; ++i) {
    auto d = dact.channel(i);
    for (int o = 0; o < C; ++o) {
      const double w = p.conv1_w[static_cast<std::size_t>(o) * Cs + i];
      if (w == 0.0) continue;
      const auto go = g.channel(o);
      for (std::size_t v = 0; v < n; ++v) d[v] += w * go[v];
    }
    const auto m = cache.mask.channel(i);
    for (std::size_t v = 0; v < n; ++v) d[v] *= m[v];
  }

  // relu, affine, normalization
  LogitTensor dconv(C, S.dims, S.spacing);
  std::vector<double> dxhat(n);
  for (int c = 0; c < C; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    const auto xh = cache.xhat.channel(c);
    const auto da = dact.channel(c);
    const double sc = p.in_scale[cs];
    const double sh = p.in_shift[cs];
    double dscale = 0.0, dshift = 0.0, sum_dx = 0.0, sum_dx_xh = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      const double dz = (xh[v] * sc + sh) > 0.0 ? da[v] : 0.0;
      dscale += dz * xh[v];
      dshift += dz;
      dxhat[v] = dz * sc;
      sum_dx += dxhat[v];
      sum_dx_xh += dxhat[v] * xh[v];
    }
    gr.in_scale[cs] = dscale;
    gr.in_shift[cs] = dshift;
    const double inv = cache.inv_std[cs];
    const auto nd = static_cast<double>(n);
    auto dy = dconv.channel(c);
    for (std::size_t v = 0; v < n; ++v) dy[v] = inv / nd * (nd * dxhat[v] - sum_dx - xh[v] * sum_dx_xh);
  }

  // conv3
  for (int o = 0; o < C; ++o) {
    const auto dy = dconv.channel(o);
    double s = 0.0;
    for (double v : dy) s += v;
    gr.conv3_b[static_cast<std::size_t>(o)] = s;
    for (int i = 0; i < C; ++i) {
      const auto in = S.channel(i);
      auto din = out.dinput.channel(i);
      for (int k = 0; k < 27; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(o) * Cs + i) * 27 + k;
        gr.conv3_w[idx] = shifted_dot(dy, in, S.dims, kz(k), ky(k), kx(k));
        const double w = p.conv3_w[idx];
        // out[z] = sum_k w in[z + k]  =>  din[u] += w dy[u - k]
        if (w != 0.0) shifted_axpy(din, dy, S.dims, -kz(k), -ky(k), -kx(k), w);
      }
    }
  }
  return out;
}

void RefineTrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::ConfigInvalid, "epochs must be >= 1");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "weight decay must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorCode::ConfigInvalid, "dropout rate not in [0, 1)");
  ScheduleConfig{lr, min_lr, epochs, cycles}.validate();
  loss.validate();
}

RefineTrainResult finetune_refinement(const std::vector<RefineSample>& samples, const RefineTrainConfig& cfg,
                                      const RefineParams* start) {
  cfg.validate();
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no training samples");
  const int C = samples.front().logits->channels;
  for (const auto& s : samples) {
    if (!s.logits || !s.labels) throw Error(ErrorCode::EmptyInput, "sample without logits or labels");
    if (s.logits->channels != C || s.logits->dims != s.labels->dims) {
      throw Error(ErrorCode::ShapeMismatch, "sample logits and labels disagree");
    }
  }
  RefineTrainResult res;
  res.params = start ? *start : init_refine(C, mix_seed(cfg.seed, 1), cfg.dropout_rate);
  if (res.params.channels != C) throw Error(ErrorCode::ShapeMismatch, "start params channel count differs");
  res.params.dropout_rate = cfg.dropout_rate;
  res.optimizer = AdamWState::for_sizes(res.params.sizes());
  const ScheduleConfig sched{cfg.lr, cfg.min_lr, cfg.epochs, cfg.cycles};
  Rng order_rng(mix_seed(cfg.seed, 2));
  std::vector<std::size_t> order(samples.size());
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    const double lr = cosine_lr(epoch, sched);
    double loss_sum = 0.0;
    for (auto idx : order) {
      const auto& s = samples[idx];
      auto fwd = refine_forward(*s.logits, res.params, RefineMode::Train, mix_seed(cfg.seed, 1000 + step));
      const auto probs = softmax_channels(fwd.output);
      const auto gt = one_hot(*s.labels, C);
      LogitTensor dprobs(C, probs.dims, probs.spacing);
      const double loss = dice_focal(probs, gt, cfg.loss, &dprobs);
      if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "refinement loss is not finite");
      loss_sum += loss;
      const auto bwd = refine_backward(fwd.cache, res.params, softmax_backward(probs, dprobs));
      adamw_step(res.params.tensors(), bwd.grads.tensors(), res.optimizer, lr, cfg.weight_decay);
      ++step;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(samples.size()));
  }
  return res;
}

void save_refine(const RefineParams& p, const AdamWState& opt, const std::string& path) {
  p.validate();
  TensorFile f;
  f.header.add("kind", "refine");
  f.header.add("channels", std::to_string(p.channels));
  f.header.add("dropout_rate", format_double(p.dropout_rate));
  f.header.add("in_eps", format_double(p.in_eps));
  f.header.add("step", std::to_string(opt.step));
  f.header.add("has_moments", opt.m.empty() ? "0" : "1");
  for (const auto& t : p.tensors()) f.tensors.emplace_back(t.begin(), t.end());
  for (const auto& m : opt.m) f.tensors.push_back(m);
  for (const auto& v : opt.v) f.tensors.push_back(v);
  save_tensor_file(path, f);
}

RefineParams load_refine(const std::string& path, int expected_channels, AdamWState* opt) {
  auto f = load_tensor_file(path);
  const auto& h = f.header;
  if (!h.has("kind") || h.get("kind") != "refine") throw Error(ErrorCode::BadCheckpoint, path + ": not a refine checkpoint");
  const int C = static_cast<int>(h.get_int("channels"));
  if (expected_channels >= 0 && C != expected_channels) {
    throw Error(ErrorCode::ShapeMismatch, path + ": head has " + std::to_string(C) + " channels");
  }
  auto p = RefineParams::zeros(C);
  p.dropout_rate = h.get_double("dropout_rate");
  p.in_eps = h.get_double("in_eps");
  const auto sizes = p.sizes();
  const bool moments = h.get_int("has_moments") != 0;
  if (f.tensors.size() != sizes.size() * (moments ? 3 : 1)) {
    throw Error(ErrorCode::ShapeMismatch, path + ": unexpected tensor count");
  }
  auto dst = p.tensors();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (f.tensors[i].size() != sizes[i]) throw Error(ErrorCode::ShapeMismatch, path + ": tensor size mismatch");
    std::copy(f.tensors[i].begin(), f.tensors[i].end(), dst[i].begin());
  }
  if (opt) {
    *opt = AdamWState{};
    opt->step = static_cast<std::uint64_t>(h.get_int("step"));
    if (moments) {
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        opt->m.push_back(f.tensors[sizes.size() + i]);
        opt->v.push_back(f.tensors[2 * sizes.size() + i]);
      }
    }
  }
  p.validate();
  return p;
}

}  // namespace textseg
