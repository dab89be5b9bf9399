#include "textseg/grid.hpp"

#include <cmath>
#include <string>

#include "textseg/error.hpp"

namespace textseg {

void validate_geometry(const Dims& dims, const Spacing& spacing) {
  if (dims.d == 0 || dims.h == 0 || dims.w == 0) {
    throw Error(ErrorCode::DimMismatch, "dims must be positive on every axis");
  }
  if (!(spacing.z > 0.0 && spacing.y > 0.0 && spacing.x > 0.0) || !std::isfinite(spacing.z) ||
      !std::isfinite(spacing.y) || !std::isfinite(spacing.x)) {
    throw Error(ErrorCode::DimMismatch, "spacing must be positive and finite");
  }
}

void Volume::validate() const {
  validate_geometry(dims, spacing);
  if (data.size() != dims.voxels()) throw Error(ErrorCode::DimMismatch, "volume data length != D*H*W");
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, "volume contains a non-finite value");
  }
}

void LabelMap::validate(int num_classes) const {
  validate_geometry(dims, spacing);
  if (data.size() != dims.voxels()) throw Error(ErrorCode::DimMismatch, "label data length != D*H*W");
  for (auto v : data) {
    if (v >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(v) + " >= class count " + std::to_string(num_classes));
    }
  }
}

void LogitTensor::validate() const {
  validate_geometry(dims, spacing);
  if (channels < 1) throw Error(ErrorCode::ShapeMismatch, "logit tensor needs at least one channel");
  if (data.size() != static_cast<std::size_t>(channels) * dims.voxels()) {
    throw Error(ErrorCode::DimMismatch, "logit data length != C*D*H*W");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, "logit tensor contains a non-finite value");
  }
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

BinaryMask binarize(const LabelMap& labels, int class_id) {
  BinaryMask m(labels.dims, labels.spacing);
  for (std::size_t i = 0; i < labels.data.size(); ++i) m.bits[i] = labels.data[i] == class_id;
  return m;
}

}  // namespace textseg
