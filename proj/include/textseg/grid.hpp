#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace textseg {

/// Background plus the 13 abdominal organs.
inline constexpr int kDefaultClasses = 14;

/// Voxel counts in (D, H, W) order; W varies fastest in memory.
struct Dims {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t voxels() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Dims&) const = default;
};

/// Millimeters per voxel along (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  double mean() const { return (z + y + x) / 3.0; }
  bool operator==(const Spacing&) const = default;
};

void validate_geometry(const Dims& dims, const Spacing& spacing);

struct Volume {
  Dims dims;
  Spacing spacing;
  std::vector<double> data;

  Volume() = default;
  Volume(Dims dims, Spacing spacing, double fill = 0.0)
      : dims(dims), spacing(spacing), data(dims.voxels(), fill) {}

  double& at(std::size_t z, std::size_t y, std::size_t x) { return data[dims.index(z, y, x)]; }
  double at(std::size_t z, std::size_t y, std::size_t x) const { return data[dims.index(z, y, x)]; }
  void validate() const;
};

struct LabelMap {
  Dims dims;
  Spacing spacing;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(Dims dims, Spacing spacing, std::uint8_t fill = 0)
      : dims(dims), spacing(spacing), data(dims.voxels(), fill) {}

  std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) { return data[dims.index(z, y, x)]; }
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const { return data[dims.index(z, y, x)]; }
  /// Throws LabelOutOfRange if any label is >= num_classes.
  void validate(int num_classes = kDefaultClasses) const;
};

/// C x D x H x W, channel-major.
struct LogitTensor {
  int channels = 0;
  Dims dims;
  Spacing spacing;
  std::vector<double> data;

  LogitTensor() = default;
  LogitTensor(int channels, Dims dims, Spacing spacing = {}, double fill = 0.0)
      : channels(channels), dims(dims), spacing(spacing),
        data(static_cast<std::size_t>(channels) * dims.voxels(), fill) {}

  std::span<double> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) * dims.voxels(), dims.voxels()};
  }
  std::span<const double> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * dims.voxels(), dims.voxels()};
  }
  double& at(int c, std::size_t v) { return data[static_cast<std::size_t>(c) * dims.voxels() + v]; }
  double at(int c, std::size_t v) const { return data[static_cast<std::size_t>(c) * dims.voxels() + v]; }
  void validate() const;
};

struct BinaryMask {
  Dims dims;
  Spacing spacing;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(Dims dims, Spacing spacing, bool fill = false)
      : dims(dims), spacing(spacing), bits(dims.voxels(), fill ? 1 : 0) {}

  bool test(std::size_t v) const { return bits[v] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

BinaryMask binarize(const LabelMap& labels, int class_id);

enum class Axis { Axial, Coronal, Sagittal };

/// A 2D plane cut out of a grid. Pixel (row, col) lives at row * width + col.
///   axial    z = index, rows = y, cols = x
///   coronal  y = index, rows = z, cols = x
///   sagittal x = index, rows = z, cols = y
struct SliceImage {
  Axis axis = Axis::Axial;
  std::size_t index = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;
};

}  // namespace textseg
