#include "textseg/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "textseg/error.hpp"

namespace textseg {

LogitTensor softmax_channels(const LogitTensor& logits) {
  LogitTensor out(logits.channels, logits.dims, logits.spacing);
  const std::size_t n = logits.dims.voxels();
  const int C = logits.channels;
  for (std::size_t v = 0; v < n; ++v) {
    double mx = logits.at(0, v);
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(c, v));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(logits.at(c, v) - mx);
      out.at(c, v) = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < C; ++c) out.at(c, v) *= inv;
  }
  return out;
}

LabelMap argmax_channels(const LogitTensor& scores) {
  if (scores.channels < 1) throw Error(ErrorCode::ShapeMismatch, "argmax needs at least one channel");
  if (scores.channels > 256) throw Error(ErrorCode::ShapeMismatch, "too many channels for a u8 label map");
  LabelMap out(scores.dims, scores.spacing);
  const std::size_t n = scores.dims.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    int best = 0;
    double best_val = scores.at(0, v);
    for (int c = 1; c < scores.channels; ++c) {
      const double s = scores.at(c, v);
      if (s > best_val) {
        best_val = s;
        best = c;
      }
    }
    out.data[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LogitTensor one_hot(const LabelMap& labels, int num_classes) {
  labels.validate(num_classes);
  LogitTensor out(num_classes, labels.dims, labels.spacing);
  for (std::size_t v = 0; v < labels.data.size(); ++v) out.at(labels.data[v], v) = 1.0;
  return out;
}

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, double overlap) {
  std::vector<std::size_t> starts;
  if (extent <= patch) {
    starts.push_back(0);
    return starts;
  }
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(patch) * (1.0 - overlap)));
  for (std::size_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

namespace {

template <typename Grid>
void copy_block(const Grid& src, Grid& dst, std::array<std::size_t, 3> off, int channels) {
  const Dims& sd = src.dims;
  const Dims& dd = dst.dims;
  for (int c = 0; c < channels; ++c) {
    const std::size_t sbase = static_cast<std::size_t>(c) * sd.voxels();
    const std::size_t dbase = static_cast<std::size_t>(c) * dd.voxels();
    for (std::size_t z = 0; z < dd.d; ++z) {
      const std::size_t sz = off[0] + z;
      if (sz >= sd.d) break;
      for (std::size_t y = 0; y < dd.h; ++y) {
        const std::size_t sy = off[1] + y;
        if (sy >= sd.h) break;
        for (std::size_t x = 0; x < dd.w; ++x) {
          const std::size_t sx = off[2] + x;
          if (sx >= sd.w) break;
          dst.data[dbase + dd.index(z, y, x)] = src.data[sbase + sd.index(sz, sy, sx)];
        }
      }
    }
  }
}

void check_overlap(double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    throw Error(ErrorCode::ConfigInvalid, "overlap must be in [0, 1)");
  }
}

template <typename Input, typename Fn>
LogitTensor sliding_window_impl(const Input& input, PatchShape patch, double overlap, const Fn& fn) {
  if (input.dims.voxels() == 0 || input.data.empty()) throw Error(ErrorCode::EmptyInput, "empty input grid");
  check_overlap(overlap);
  if (patch.d == 0 || patch.h == 0 || patch.w == 0) throw Error(ErrorCode::ConfigInvalid, "patch dims must be positive");

  const Dims in = input.dims;
  // Zero-pad up to one patch on any axis that is too small.
  const Dims padded{std::max(in.d, patch.d), std::max(in.h, patch.h), std::max(in.w, patch.w)};
  const Dims pdims{patch.d, patch.h, patch.w};
  const auto zs = window_starts(padded.d, patch.d, overlap);
  const auto ys = window_starts(padded.h, patch.h, overlap);
  const auto xs = window_starts(padded.w, patch.w, overlap);

  LogitTensor sum;
  std::vector<double> count(in.voxels(), 0.0);
  for (std::size_t oz : zs) {
    for (std::size_t oy : ys) {
      for (std::size_t ox : xs) {
        const Input window = crop(input, {oz, oy, ox}, pdims);
        const LogitTensor out = fn(window);
        if (out.dims != pdims) throw Error(ErrorCode::ShapeMismatch, "patch function changed the patch dims");
        if (sum.channels == 0) {
          sum = LogitTensor(out.channels, in, input.spacing);
        } else if (out.channels != sum.channels) {
          throw Error(ErrorCode::ShapeMismatch, "patch function returned inconsistent channel counts");
        }
        for (std::size_t z = 0; z < pdims.d && oz + z < in.d; ++z) {
          for (std::size_t y = 0; y < pdims.h && oy + y < in.h; ++y) {
            for (std::size_t x = 0; x < pdims.w && ox + x < in.w; ++x) {
              const std::size_t dv = in.index(oz + z, oy + y, ox + x);
              const std::size_t pv = pdims.index(z, y, x);
              for (int c = 0; c < out.channels; ++c) sum.at(c, dv) += out.at(c, pv);
              count[dv] += 1.0;
            }
          }
        }
      }
    }
  }
  for (int c = 0; c < sum.channels; ++c) {
    auto ch = sum.channel(c);
    for (std::size_t v = 0; v < ch.size(); ++v) ch[v] /= count[v];
  }
  return sum;
}

}  // namespace

Volume crop(const Volume& v, std::array<std::size_t, 3> offset, Dims size) {
  Volume out(size, v.spacing);
  copy_block(v, out, offset, 1);
  return out;
}

LabelMap crop(const LabelMap& v, std::array<std::size_t, 3> offset, Dims size) {
  LabelMap out(size, v.spacing);
  copy_block(v, out, offset, 1);
  return out;
}

LogitTensor crop(const LogitTensor& v, std::array<std::size_t, 3> offset, Dims size) {
  LogitTensor out(v.channels, size, v.spacing);
  copy_block(v, out, offset, v.channels);
  return out;
}

LogitTensor sliding_window_apply(const Volume& input, PatchShape patch, double overlap, const VolumePatchFn& fn) {
  return sliding_window_impl(input, patch, overlap, fn);
}

LogitTensor sliding_window_apply(const LogitTensor& input, PatchShape patch, double overlap,
                                 const LogitPatchFn& fn) {
  return sliding_window_impl(input, patch, overlap, fn);
}

Axis parse_axis(std::string_view name) {
  if (name == "axial" || name == "z") return Axis::Axial;
  if (name == "coronal" || name == "y") return Axis::Coronal;
  if (name == "sagittal" || name == "x") return Axis::Sagittal;
  throw Error(ErrorCode::ConfigInvalid, "unknown axis '" + std::string(name) + "'");
}

std::string_view axis_name(Axis axis) {
  switch (axis) {
    case Axis::Axial: return "axial";
    case Axis::Coronal: return "coronal";
    case Axis::Sagittal: return "sagittal";
  }
  return "axial";
}

std::size_t axis_extent(const Dims& dims, Axis axis) {
  switch (axis) {
    case Axis::Axial: return dims.d;
    case Axis::Coronal: return dims.h;
    case Axis::Sagittal: return dims.w;
  }
  return 0;
}

namespace {

template <typename Get>
SliceImage slice_impl(const Dims& dims, Axis axis, std::size_t index, Get get) {
  if (index >= axis_extent(dims, axis)) {
    throw Error(ErrorCode::IndexOutOfRange, "slice index " + std::to_string(index) + " outside " +
                                                std::string(axis_name(axis)) + " extent " +
                                                std::to_string(axis_extent(dims, axis)));
  }
  SliceImage img;
  img.axis = axis;
  img.index = index;
  switch (axis) {
    case Axis::Axial:
      img.height = dims.h;
      img.width = dims.w;
      break;
    case Axis::Coronal:
      img.height = dims.d;
      img.width = dims.w;
      break;
    case Axis::Sagittal:
      img.height = dims.d;
      img.width = dims.h;
      break;
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      std::size_t v = 0;
      switch (axis) {
        case Axis::Axial: v = dims.index(index, r, c); break;
        case Axis::Coronal: v = dims.index(r, index, c); break;
        case Axis::Sagittal: v = dims.index(r, c, index); break;
      }
      img.pixels[r * img.width + c] = get(v);
    }
  }
  return img;
}

}  // namespace

SliceImage extract_slice(const Volume& grid, Axis axis, std::size_t index) {
  return slice_impl(grid.dims, axis, index, [&](std::size_t v) { return grid.data[v]; });
}

SliceImage extract_slice(const LabelMap& grid, Axis axis, std::size_t index) {
  return slice_impl(grid.dims, axis, index, [&](std::size_t v) { return static_cast<double>(grid.data[v]); });
}

SliceImage extract_slice(const LogitTensor& grid, int channel, Axis axis, std::size_t index) {
  if (channel < 0 || channel >= grid.channels) throw Error(ErrorCode::IndexOutOfRange, "channel out of range");
  return slice_impl(grid.dims, axis, index, [&](std::size_t v) { return grid.at(channel, v); });
}

}  // namespace textseg
