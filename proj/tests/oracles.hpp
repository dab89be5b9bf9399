#pragma once

// Slow, obviously-correct reference implementations used to check the
// library's fast paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "textseg/grid.hpp"

namespace oracle {

/// Squared mm distance between two voxels, axis terms added in x, y, z order.
inline double sq_dist(const textseg::Spacing& sp, long dz, long dy, long dx) {
  const double wx = sp.x * sp.x, wy = sp.y * sp.y, wz = sp.z * sp.z;
  const auto fx = static_cast<double>(dx), fy = static_cast<double>(dy), fz = static_cast<double>(dz);
  return wx * fx * fx + wy * fy * fy + wz * fz * fz;
}

/// O(n^2) squared distance transform.
inline std::vector<double> brute_sq_edt(const textseg::BinaryMask& m) {
  const auto& d = m.dims;
  std::vector<std::array<long, 3>> sites;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x)
        if (m.test(d.index(z, y, x))) sites.push_back({long(z), long(y), long(x)});
  std::vector<double> out(d.voxels(), std::numeric_limits<double>::infinity());
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : sites) best = std::min(best, sq_dist(m.spacing, long(z) - s[0], long(y) - s[1], long(x) - s[2]));
        out[d.index(z, y, x)] = best;
      }
  return out;
}

inline std::size_t count(const textseg::BinaryMask& m) {
  std::size_t n = 0;
  for (auto b : m.bits) n += b ? 1 : 0;
  return n;
}

inline std::size_t overlap(const textseg::BinaryMask& a, const textseg::BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] && b.bits[i]) ? 1 : 0;
  return n;
}

inline double dsc(const textseg::BinaryMask& p, const textseg::BinaryMask& g) {
  const double s = double(count(p) + count(g));
  return s == 0.0 ? 1.0 : 2.0 * double(overlap(p, g)) / s;
}

inline double iou(const textseg::BinaryMask& p, const textseg::BinaryMask& g) {
  const double u = double(count(p) + count(g) - overlap(p, g));
  return u == 0.0 ? 1.0 : double(overlap(p, g)) / u;
}

inline std::optional<double> rvd(const textseg::BinaryMask& p, const textseg::BinaryMask& g) {
  if (count(g) == 0) return std::nullopt;
  return (double(count(p)) - double(count(g))) / double(count(g)) * 100.0;
}

/// Linear-interpolated percentile at rank q*(n-1) of the sorted values.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

/// HD95 from all point pairs: for each set voxel of one mask the nearest set
/// voxel of the other, both directions, max of the two 95th percentiles.
inline std::optional<double> hd95(const textseg::BinaryMask& p, const textseg::BinaryMask& g) {
  const auto np = count(p), ng = count(g);
  if (np == 0 && ng == 0) return 0.0;
  if (np == 0 || ng == 0) return std::nullopt;
  const auto& d = p.dims;
  auto points = [&](const textseg::BinaryMask& m) {
    std::vector<std::array<long, 3>> pts;
    for (std::size_t z = 0; z < d.d; ++z)
      for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x)
          if (m.test(d.index(z, y, x))) pts.push_back({long(z), long(y), long(x)});
    return pts;
  };
  const auto pp = points(p), gp = points(g);
  auto directed = [&](const auto& from, const auto& to) {
    std::vector<double> out;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) best = std::min(best, sq_dist(p.spacing, a[0] - b[0], a[1] - b[1], a[2] - b[2]));
      out.push_back(std::sqrt(best));
    }
    return out;
  };
  return std::max(percentile(directed(pp, gp), 0.95), percentile(directed(gp, pp), 0.95));
}

/// Central difference of f around x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// Relative error with a floor on the denominator so entries that are zero
/// to within finite-difference noise compare on an absolute scale.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
