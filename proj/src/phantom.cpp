#include "textseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/rng.hpp"

namespace textseg {

void PhantomSpec::validate() const {
  try {
    validate_geometry(dims, spacing);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  std::set<int> seen;
  for (const auto& o : organs) {
    if (o.class_id < 1 || o.class_id > 13) throw Error(ErrorCode::ConfigInvalid, "organ class id outside 1..13");
    if (!seen.insert(o.class_id).second) throw Error(ErrorCode::ConfigInvalid, "duplicate organ class id");
    for (double r : o.radii) {
      if (!(r > 0.0)) throw Error(ErrorCode::ConfigInvalid, "organ radii must be > 0");
    }
    if (!(o.intensity_sigma >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "intensity sigma must be >= 0");
  }
  if (!(background_sigma >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "background sigma must be >= 0");
}

PhantomSpec default_phantom_spec(std::uint64_t seed, bool jitter) {
  PhantomSpec s;
  s.seed = seed;
  s.organs = {
      {6, {48, 30, 22}, {30, 18, 16}, 60.0, 10.0},   // liver
      {1, {44, 34, 57}, {14, 10, 8}, 45.0, 10.0},    // spleen
      {2, {58, 52, 20}, {14, 7, 7}, 150.0, 12.0},    // right kidney
      {3, {58, 52, 52}, {14, 7, 7}, 150.0, 12.0},    // left kidney
      {7, {36, 24, 46}, {14, 10, 12}, 20.0, 15.0},   // stomach
  };
  if (jitter) {
    Rng rng(mix_seed(seed, 0x5eed));
    for (auto& o : s.organs) {
      for (auto& c : o.center) c += rng.uniform(-3.0, 3.0);
      for (auto& r : o.radii) r *= rng.uniform(0.9, 1.1);
    }
  }
  return s;
}

PhantomSpec parse_phantom_spec(std::string_view text) {
  const auto kv = KeyValueFile::parse(text, ':');
  PhantomSpec s;
  s.organs.clear();
  if (kv.has("dims")) {
    const auto d = kv.get_doubles("dims");
    if (d.size() != 3) throw Error(ErrorCode::ConfigInvalid, "dims needs 3 values");
    s.dims = {static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]), static_cast<std::size_t>(d[2])};
  }
  if (kv.has("spacing")) {
    const auto d = kv.get_doubles("spacing");
    if (d.size() != 3) throw Error(ErrorCode::ConfigInvalid, "spacing needs 3 values");
    s.spacing = {d[0], d[1], d[2]};
  }
  if (kv.has("background")) {
    const auto b = kv.get_doubles("background");
    if (b.size() != 2) throw Error(ErrorCode::ConfigInvalid, "background needs mean,sigma");
    s.background_mean = b[0];
    s.background_sigma = b[1];
  }
  if (kv.has("seed")) s.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  for (const auto& line : kv.get_all("organ")) {
    std::vector<double> v;
    for (const auto& part : split(line, ',')) v.push_back(parse_double(part));
    if (v.size() != 9) throw Error(ErrorCode::ConfigInvalid, "organ line needs id,cz,cy,cx,rz,ry,rx,mean,sigma");
    s.organs.push_back({static_cast<int>(v[0]), {v[1], v[2], v[3]}, {v[4], v[5], v[6]}, v[7], v[8]});
  }
  s.validate();
  return s;
}

PhantomSpec load_phantom_spec(const std::string& path) { return parse_phantom_spec(read_file(path)); }

std::string serialize_phantom_spec(const PhantomSpec& spec) {
  KeyValueFile kv;
  kv.add("dims", std::to_string(spec.dims.d) + "," + std::to_string(spec.dims.h) + "," + std::to_string(spec.dims.w));
  kv.add("spacing", format_double(spec.spacing.z) + "," + format_double(spec.spacing.y) + "," +
                        format_double(spec.spacing.x));
  kv.add("background", format_double(spec.background_mean) + "," + format_double(spec.background_sigma));
  kv.add("seed", std::to_string(spec.seed));
  for (const auto& o : spec.organs) {
    std::string line = std::to_string(o.class_id);
    for (double v : o.center) line += "," + format_double(v);
    for (double v : o.radii) line += "," + format_double(v);
    line += "," + format_double(o.intensity_mean) + "," + format_double(o.intensity_sigma);
    kv.add("organ", line);
  }
  return kv.serialize(':');
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Phantom out{Volume(spec.dims, spec.spacing), LabelMap(spec.dims, spec.spacing)};
  Rng rng(spec.seed);
  const Dims& d = spec.dims;
  for (std::size_t z = 0; z < d.d; ++z) {
    const double pz = (static_cast<double>(z) + 0.5) * spec.spacing.z;
    for (std::size_t y = 0; y < d.h; ++y) {
      const double py = (static_cast<double>(y) + 0.5) * spec.spacing.y;
      for (std::size_t x = 0; x < d.w; ++x) {
        const double px = (static_cast<double>(x) + 0.5) * spec.spacing.x;
        const PhantomOrgan* hit = nullptr;
        for (const auto& o : spec.organs) {
          const double a = (pz - o.center[0]) / o.radii[0];
          const double b = (py - o.center[1]) / o.radii[1];
          const double c = (px - o.center[2]) / o.radii[2];
          if (a * a + b * b + c * c <= 1.0) {
            hit = &o;
            break;
          }
        }
        const std::size_t v = d.index(z, y, x);
        const double noise = rng.normal();
        if (hit) {
          out.labels.data[v] = static_cast<std::uint8_t>(hit->class_id);
          out.volume.data[v] = hit->intensity_mean + hit->intensity_sigma * noise;
        } else {
          out.volume.data[v] = spec.background_mean + spec.background_sigma * noise;
        }
      }
    }
  }
  return out;
}

void LogitOracleConfig::validate() const {
  if (!(scale > 0.0)) throw Error(ErrorCode::ConfigInvalid, "oracle scale must be > 0");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "oracle noise must be >= 0");
  if (!(suppression_margin >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "suppression margin must be >= 0");
  for (const auto& p : confusion_pairs) {
    if (!(p.prob >= 0.0 && p.prob <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "confusion probability not in [0, 1]");
  }
}

LogitTensor oracle_logits(const LabelMap& labels, const LogitOracleConfig& cfg, int num_classes) {
  cfg.validate();
  labels.validate(num_classes);
  for (const auto& p : cfg.confusion_pairs) {
    if (p.from < 0 || p.from >= num_classes || p.to < 0 || p.to >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "confusion pair class outside 0..C-1");
    }
  }
  std::vector<std::uint8_t> suppressed(static_cast<std::size_t>(num_classes), 0);
  for (int c : cfg.suppressed_classes) {
    if (c < 0 || c >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "suppressed class outside 0..C-1");
    if (c > 0) suppressed[static_cast<std::size_t>(c)] = 1;
  }
  LogitTensor out(num_classes, labels.dims, labels.spacing);
  Rng rng(cfg.seed);
  const std::size_t n = labels.dims.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    const int g = labels.data[v];
    if (suppressed[static_cast<std::size_t>(g)]) {
      out.at(0, v) = cfg.scale;
      out.at(g, v) = cfg.scale - cfg.suppression_margin;
    } else {
      int target = g;
      for (const auto& p : cfg.confusion_pairs) {
        if (p.from == g && rng.bernoulli(p.prob)) {
          target = p.to;
          break;
        }
      }
      out.at(target, v) = cfg.scale;
    }
  }
  if (cfg.noise_sigma > 0.0) {
    for (auto& x : out.data) x += cfg.noise_sigma * rng.normal();
  }
  return out;
}

void PatchSamplerConfig::validate() const {
  if (patch.d == 0 || patch.h == 0 || patch.w == 0) throw Error(ErrorCode::ConfigInvalid, "patch dims must be > 0");
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "pos_fraction not in [0, 1]");
}

std::vector<std::array<std::size_t, 3>> sample_patch_offsets(const LabelMap& labels, const PatchSamplerConfig& cfg) {
  cfg.validate();
  const Dims& d = labels.dims;
  const std::array<std::size_t, 3> extent{d.d, d.h, d.w};
  const std::array<std::size_t, 3> size{cfg.patch.d, cfg.patch.h, cfg.patch.w};
  std::vector<std::size_t> fg;
  for (std::size_t v = 0; v < labels.data.size(); ++v) {
    if (labels.data[v] != 0) fg.push_back(v);
  }
  Rng rng(cfg.seed);
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t i = 0; i < cfg.samples_per_volume; ++i) {
    std::array<std::size_t, 3> origin{};
    if (rng.bernoulli(cfg.pos_fraction)) {
      if (fg.empty()) throw Error(ErrorCode::NoForeground, "positive patch requested but the label map is empty");
      const std::size_t v = fg[rng.below(fg.size())];
      const std::array<std::size_t, 3> c{v / (d.h * d.w), (v / d.w) % d.h, v % d.w};
      for (int a = 0; a < 3; ++a) {
        if (size[a] >= extent[a]) continue;
        const std::size_t half = size[a] / 2;
        const std::size_t lo = c[a] > half ? c[a] - half : 0;
        origin[a] = std::min(lo, extent[a] - size[a]);
      }
    } else {
      for (int a = 0; a < 3; ++a) {
        if (size[a] < extent[a]) origin[a] = rng.below(extent[a] - size[a] + 1);
      }
    }
    out.push_back(origin);
  }
  return out;
}

std::vector<PatchSample> sample_patches(const Volume& volume, const LabelMap& labels, const PatchSamplerConfig& cfg) {
  if (volume.dims != labels.dims) throw Error(ErrorCode::DimMismatch, "volume and labels dims differ");
  const Dims size{cfg.patch.d, cfg.patch.h, cfg.patch.w};
  std::vector<PatchSample> out;
  for (const auto& o : sample_patch_offsets(labels, cfg)) {
    out.push_back({crop(volume, o, size), crop(labels, o, size), o});
  }
  return out;
}

void AugmentConfig::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "flip probability not in [0, 1]");
  if (!(max_intensity_shift >= 0.0 && max_intensity_shift <= 0.1)) {
    throw Error(ErrorCode::ConfigInvalid, "intensity shift must be within [0, 0.1]");
  }
}

AugmentOps draw_augment(const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  AugmentOps ops;
  for (auto& f : ops.flip) f = rng.bernoulli(cfg.flip_prob);
  if (cfg.rot90) {
    static constexpr std::array<std::array<int, 2>, 3> kPlanes{{{0, 1}, {0, 2}, {1, 2}}};
    ops.rot_axes = kPlanes[rng.below(3)];
    ops.rot_k = static_cast<int>(rng.below(4));
  }
  ops.intensity_factor = 1.0 + rng.uniform(-cfg.max_intensity_shift, cfg.max_intensity_shift);
  return ops;
}

namespace {

template <typename T>
std::vector<T> flip_axis(const std::vector<T>& in, const Dims& d, int axis) {
  std::vector<T> out(in.size());
  for (std::size_t z = 0; z < d.d; ++z) {
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        std::size_t sz = z, sy = y, sx = x;
        if (axis == 0) sz = d.d - 1 - z;
        if (axis == 1) sy = d.h - 1 - y;
        if (axis == 2) sx = d.w - 1 - x;
        out[d.index(z, y, x)] = in[d.index(sz, sy, sx)];
      }
    }
  }
  return out;
}

/// One quarter turn in the (a, b) plane: out[.., p@a, q@b, ..] = in[.., n_a - 1 - q @a, p @b, ..].
template <typename T>
std::vector<T> rot90_once(const std::vector<T>& in, const Dims& d, int a, int b, Dims& out_dims) {
  std::array<std::size_t, 3> ext{d.d, d.h, d.w};
  std::array<std::size_t, 3> oext = ext;
  std::swap(oext[a], oext[b]);
  out_dims = {oext[0], oext[1], oext[2]};
  std::vector<T> out(in.size());
  std::array<std::size_t, 3> o{};
  for (o[0] = 0; o[0] < oext[0]; ++o[0]) {
    for (o[1] = 0; o[1] < oext[1]; ++o[1]) {
      for (o[2] = 0; o[2] < oext[2]; ++o[2]) {
        auto s = o;
        s[a] = ext[a] - 1 - o[b];
        s[b] = o[a];
        out[out_dims.index(o[0], o[1], o[2])] = in[d.index(s[0], s[1], s[2])];
      }
    }
  }
  return out;
}

}  // namespace

std::pair<Volume, LabelMap> apply_augment(const Volume& volume, const LabelMap& labels, const AugmentOps& ops) {
  if (volume.dims != labels.dims) throw Error(ErrorCode::DimMismatch, "volume and labels dims differ");
  if (ops.rot_axes[0] == ops.rot_axes[1] || ops.rot_axes[0] < 0 || ops.rot_axes[0] > 2 || ops.rot_axes[1] < 0 ||
      ops.rot_axes[1] > 2) {
    throw Error(ErrorCode::ConfigInvalid, "rotation needs two distinct axes");
  }
  Dims d = volume.dims;
  std::array<double, 3> sp{volume.spacing.z, volume.spacing.y, volume.spacing.x};
  auto vdata = volume.data;
  auto ldata = labels.data;
  for (int a = 0; a < 3; ++a) {
    if (!ops.flip[a]) continue;
    vdata = flip_axis(vdata, d, a);
    ldata = flip_axis(ldata, d, a);
  }
  const int k = ((ops.rot_k % 4) + 4) % 4;
  for (int i = 0; i < k; ++i) {
    Dims nd;
    vdata = rot90_once(vdata, d, ops.rot_axes[0], ops.rot_axes[1], nd);
    ldata = rot90_once(ldata, d, ops.rot_axes[0], ops.rot_axes[1], nd);
    std::swap(sp[ops.rot_axes[0]], sp[ops.rot_axes[1]]);
    d = nd;
  }
  for (auto& v : vdata) v *= ops.intensity_factor;
  const Spacing spacing{sp[0], sp[1], sp[2]};
  Volume ov(d, spacing);
  ov.data = std::move(vdata);
  LabelMap ol(d, spacing);
  ol.data = std::move(ldata);
  return {std::move(ov), std::move(ol)};
}

std::pair<Volume, LabelMap> augment(const Volume& volume, const LabelMap& labels, const AugmentConfig& cfg,
                                    std::uint64_t seed) {
  return apply_augment(volume, labels, draw_augment(cfg, seed));
}

Volume normalize_intensity(const Volume& raw) {
  Volume out = raw;
  for (auto& v : out.data) v = (std::clamp(v, kHuLow, kHuHigh) - kHuLow) / (kHuHigh - kHuLow);
  return out;
}

void IntensityModel::validate() const {
  if (mean.size() < 2 || sigma.size() != mean.size()) throw Error(ErrorCode::ConfigInvalid, "intensity model shape");
  for (double s : sigma) {
    if (!(s > 0.0)) throw Error(ErrorCode::ConfigInvalid, "intensity sigma must be > 0");
  }
  if (!(scale > 0.0)) throw Error(ErrorCode::ConfigInvalid, "intensity model scale must be > 0");
}

IntensityModel intensity_model_from_spec(const PhantomSpec& spec, int num_classes) {
  const double range = kHuHigh - kHuLow;
  auto norm = [&](double hu) { return (std::clamp(hu, kHuLow, kHuHigh) - kHuLow) / range; };
  IntensityModel m;
  m.mean.assign(static_cast<std::size_t>(num_classes), 10.0);
  m.sigma.assign(static_cast<std::size_t>(num_classes), 0.05);
  m.mean[0] = norm(spec.background_mean);
  m.sigma[0] = std::max(spec.background_sigma / range, 0.01);
  for (const auto& o : spec.organs) {
    if (o.class_id >= num_classes) continue;
    m.mean[static_cast<std::size_t>(o.class_id)] = norm(o.intensity_mean);
    m.sigma[static_cast<std::size_t>(o.class_id)] = std::max(o.intensity_sigma / range, 0.01);
  }
  return m;
}

void save_intensity_model(const IntensityModel& model, const std::string& path) {
  model.validate();
  KeyValueFile kv;
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
  };
  kv.add("classes", std::to_string(model.mean.size()));
  kv.add("scale", format_double(model.scale));
  kv.add("mean", join(model.mean));
  kv.add("sigma", join(model.sigma));
  kv.write(path, ':');
}

IntensityModel load_intensity_model(const std::string& path) {
  const auto kv = KeyValueFile::read(path, ':');
  IntensityModel m;
  m.scale = kv.get_double("scale");
  m.mean = kv.get_doubles("mean");
  m.sigma = kv.get_doubles("sigma");
  m.validate();
  return m;
}

LogitTensor intensity_logits(const Volume& normalized, const IntensityModel& model) {
  model.validate();
  LogitTensor out(model.classes(), normalized.dims, normalized.spacing);
  const std::size_t n = normalized.dims.voxels();
  for (int c = 0; c < model.classes(); ++c) {
    const double mu = model.mean[static_cast<std::size_t>(c)];
    const double s2 = 2.0 * model.sigma[static_cast<std::size_t>(c)] * model.sigma[static_cast<std::size_t>(c)];
    auto ch = out.channel(c);
    for (std::size_t v = 0; v < n; ++v) {
      const double dx = normalized.data[v] - mu;
      ch[v] = -model.scale * dx * dx / s2;
    }
  }
  return out;
}

}  // namespace textseg
