#pragma once

#include <array>
#include <functional>
#include <string_view>

#include "textseg/grid.hpp"

namespace textseg {

/// Per-voxel softmax over channels (max-subtracted). Sums accumulate in
/// channel order so results are bit-reproducible.
LogitTensor softmax_channels(const LogitTensor& logits);

/// Per-voxel index of the largest channel; exact ties go to the lowest index.
LabelMap argmax_channels(const LogitTensor& scores);

LogitTensor one_hot(const LabelMap& labels, int num_classes);

struct PatchShape {
  std::size_t d = 96;
  std::size_t h = 96;
  std::size_t w = 96;
};

/// Window start offsets along one axis: multiples of the stride, with the last
/// window pinned to the end of the (padded) extent.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, double overlap);

using VolumePatchFn = std::function<LogitTensor(const Volume&)>;
using LogitPatchFn = std::function<LogitTensor(const LogitTensor&)>;

/// Tiles the input with overlapping patches, zero-pads when the input is
/// smaller than a patch, and averages overlapping outputs with uniform
/// weights. The output has the input's dims.
LogitTensor sliding_window_apply(const Volume& input, PatchShape patch, double overlap, const VolumePatchFn& fn);
LogitTensor sliding_window_apply(const LogitTensor& input, PatchShape patch, double overlap,
                                 const LogitPatchFn& fn);

Axis parse_axis(std::string_view name);
std::string_view axis_name(Axis axis);
std::size_t axis_extent(const Dims& dims, Axis axis);

SliceImage extract_slice(const Volume& grid, Axis axis, std::size_t index);
SliceImage extract_slice(const LabelMap& grid, Axis axis, std::size_t index);
SliceImage extract_slice(const LogitTensor& grid, int channel, Axis axis, std::size_t index);

/// Sub-block [offset, offset + size) of a grid; voxels outside the source read
/// as zero.
Volume crop(const Volume& v, std::array<std::size_t, 3> offset, Dims size);
LabelMap crop(const LabelMap& v, std::array<std::size_t, 3> offset, Dims size);
LogitTensor crop(const LogitTensor& v, std::array<std::size_t, 3> offset, Dims size);

}  // namespace textseg
