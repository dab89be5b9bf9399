#include "textseg/spatial_prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "textseg/error.hpp"

namespace textseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// 1D squared distance transform of f along a strided line:
/// out(p) = min_q f(q) + w2 (p - q)^2, skipping sites with f = inf.
void edt_line(double* data, std::size_t n, std::size_t stride, double w2, std::vector<double>& f,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  f.resize(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = data[i * stride];
  v.resize(n);
  z.resize(n + 1);

  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    const auto qd = static_cast<double>(q);
    double s;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + w2 * qd * qd) - (f[v[k]] + w2 * vk * vk)) / (2.0 * w2 * (qd - vk));
      // z[0] is -inf, so this never pops past the first parabola.
      if (s <= z[k]) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) return;

  k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const auto pd = static_cast<double>(p);
    while (z[k + 1] < pd) ++k;
    const double d = pd - static_cast<double>(v[k]);
    data[p * stride] = f[v[k]] + w2 * d * d;
  }
}

}  // namespace

DistanceField squared_edt(const BinaryMask& mask) {
  validate_geometry(mask.dims, mask.spacing);
  if (mask.bits.size() != mask.dims.voxels()) throw Error(ErrorCode::DimMismatch, "mask bits != D*H*W");
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "distance transform of an empty mask");

  DistanceField out{mask.dims, mask.spacing, std::vector<double>(mask.dims.voxels())};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = mask.bits[i] ? 0.0 : kInf;

  const Dims& d = mask.dims;
  std::vector<double> f;
  std::vector<std::size_t> v;
  std::vector<double> z;
  double* data = out.values.data();
  const double wx = mask.spacing.x * mask.spacing.x;
  const double wy = mask.spacing.y * mask.spacing.y;
  const double wz = mask.spacing.z * mask.spacing.z;

  for (std::size_t zz = 0; zz < d.d; ++zz) {
    for (std::size_t y = 0; y < d.h; ++y) edt_line(data + d.index(zz, y, 0), d.w, 1, wx, f, v, z);
  }
  for (std::size_t zz = 0; zz < d.d; ++zz) {
    for (std::size_t x = 0; x < d.w; ++x) edt_line(data + d.index(zz, 0, x), d.h, d.w, wy, f, v, z);
  }
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t x = 0; x < d.w; ++x) edt_line(data + d.index(0, y, x), d.d, d.h * d.w, wz, f, v, z);
  }
  return out;
}

BinaryMask dilate(const BinaryMask& mask, double radius_mm) {
  if (!(radius_mm >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "dilation radius must be >= 0");
  const auto dist = squared_edt(mask);
  BinaryMask out(mask.dims, mask.spacing);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = std::sqrt(dist.values[i]) <= radius_mm;
  return out;
}

void RelationPriorConfig::validate() const {
  if (!(d_max > 0.0)) throw Error(ErrorCode::ConfigInvalid, "d_max must be > 0");
  if (dilate_anchor && !(dilation_radius >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "dilation radius must be >= 0");
}

double relation_prior_value(double distance, double d_max) { return std::max(0.0, 1.0 - distance / (d_max + 1.0)); }

std::vector<double> relation_prior(const BinaryMask& anchor, const RelationPriorConfig& cfg) {
  cfg.validate();
  const BinaryMask& region =
      cfg.dilate_anchor ? dilate(anchor, cfg.dilation_radius * anchor.spacing.mean()) : anchor;
  const auto dist = squared_edt(region);
  const double dmax = cfg.d_max_mm(anchor.spacing);
  std::vector<double> out(dist.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = relation_prior_value(std::sqrt(dist.values[i]), dmax);
  return out;
}

PriorAssembly assemble_prior_tensor(const std::vector<Relation>& relations,
                                    const std::map<int, BinaryMask>& anchor_masks, int num_classes, Dims dims,
                                    Spacing spacing, const RelationPriorConfig& cfg) {
  PriorAssembly out;
  out.prior = LogitTensor(num_classes, dims, spacing);
  for (const auto& rel : relations) {
    if (rel.target < 1 || rel.target >= num_classes) {
      out.skipped.push_back(rel);
      continue;
    }
    const auto it = anchor_masks.find(rel.anchor);
    if (it == anchor_masks.end() || it->second.empty()) {
      out.skipped.push_back(rel);
      continue;
    }
    if (it->second.dims != dims) throw Error(ErrorCode::ShapeMismatch, "anchor mask dims differ from prior dims");
    auto field = relation_prior(it->second, cfg);
    auto ch = out.prior.channel(rel.target);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = std::max(ch[i], field[i]);
    out.regions.push_back({rel.target, std::move(field)});
  }
  return out;
}

PriorAssembly assemble_prior_from_labels(const std::vector<Relation>& relations, const LabelMap& anchors,
                                         int num_classes, const RelationPriorConfig& cfg) {
  std::map<int, BinaryMask> masks;
  for (const auto& rel : relations) {
    if (!masks.count(rel.anchor)) masks.emplace(rel.anchor, binarize(anchors, rel.anchor));
  }
  return assemble_prior_tensor(relations, masks, num_classes, anchors.dims, anchors.spacing, cfg);
}

}  // namespace textseg
