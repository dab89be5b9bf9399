#pragma once

#include <string>

#include "textseg/grid.hpp"

namespace textseg {

enum class DType { F32, U8 };

/// Parsed `<name>.vol.hdr` sidecar.
struct GridHeader {
  Dims dims;
  Spacing spacing;
  int channels = 1;
  DType dtype = DType::F32;
  std::uint32_t crc32 = 0;
};

std::string header_path(const std::string& payload_path);
GridHeader read_grid_header(const std::string& payload_path);

/// Payload is little-endian f32 (volumes, logits) or u8 (labels); the header
/// carries dims, spacing, channels, dtype and the payload CRC-32.
void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

void save_labels(const LabelMap& labels, const std::string& path);
LabelMap load_labels(const std::string& path);

void save_logits(const LogitTensor& logits, const std::string& path);
LogitTensor load_logits(const std::string& path);

}  // namespace textseg
