#pragma once

#include <string>
#include <vector>

#include "textseg/kvfile.hpp"

namespace textseg {

/// A list of f64 tensors stored as one little-endian payload plus a
/// `key=value` sidecar at `<path>.hdr`. The sidecar records every tensor
/// length (`sizes`) and the payload crc32 next to caller-supplied keys.
struct TensorFile {
  KeyValueFile header;
  std::vector<std::vector<double>> tensors;
};

void save_tensor_file(const std::string& path, const TensorFile& file);

/// Throws MissingHeader, BadChecksum (size or crc mismatch) or BadCheckpoint.
TensorFile load_tensor_file(const std::string& path);

}  // namespace textseg
