#include "textseg/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"

namespace textseg {

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

std::string header_path(const std::string& payload_path) { return payload_path + ".hdr"; }

namespace {

std::string dims_text(const Dims& d) {
  return std::to_string(d.d) + "," + std::to_string(d.h) + "," + std::to_string(d.w);
}

void write_grid(const std::string& path, const Dims& dims, const Spacing& sp, int channels, DType dtype,
                const std::string& payload) {
  const auto crc = crc32_of({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()});
  KeyValueFile hdr;
  hdr.add("dims", dims_text(dims));
  hdr.add("spacing", format_double(sp.z) + "," + format_double(sp.y) + "," + format_double(sp.x));
  hdr.add("channels", std::to_string(channels));
  hdr.add("dtype", dtype == DType::F32 ? "f32" : "u8");
  hdr.add("crc32", hex32(crc));
  write_file(path, payload);
  hdr.write(header_path(path), '=');
}

std::string f32_payload(const std::vector<double>& values) {
  std::string out(values.size() * sizeof(float), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw Error(ErrorCode::NonFiniteData, "refusing to save a non-finite value");
    const float f = static_cast<float>(values[i]);
    std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

struct RawGrid {
  GridHeader header;
  std::string payload;
};

RawGrid read_raw(const std::string& path, DType expected) {
  RawGrid raw;
  raw.header = read_grid_header(path);
  if (raw.header.dtype != expected) {
    throw Error(ErrorCode::DimMismatch, path + ": unexpected dtype");
  }
  raw.payload = read_file(path);
  const std::size_t elem = expected == DType::F32 ? sizeof(float) : 1;
  const std::size_t want = raw.header.dims.voxels() * static_cast<std::size_t>(raw.header.channels) * elem;
  if (raw.payload.size() != want) {
    throw Error(ErrorCode::DimMismatch, path + ": header declares " + std::to_string(want) + " bytes, payload has " +
                                            std::to_string(raw.payload.size()));
  }
  const auto crc = crc32_of({reinterpret_cast<const std::uint8_t*>(raw.payload.data()), raw.payload.size()});
  if (crc != raw.header.crc32) throw Error(ErrorCode::BadChecksum, path + ": payload crc32 mismatch");
  return raw;
}

std::vector<double> decode_f32(const std::string& payload) {
  std::vector<double> out(payload.size() / sizeof(float));
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, payload.data() + i * sizeof(float), sizeof(float));
    if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteData, "payload contains a non-finite value");
    out[i] = f;
  }
  return out;
}

}  // namespace

GridHeader read_grid_header(const std::string& payload_path) {
  const std::string hp = header_path(payload_path);
  if (!std::filesystem::exists(hp)) throw Error(ErrorCode::MissingHeader, "no header sidecar " + hp);
  GridHeader h;
  try {
    const auto kv = KeyValueFile::read(hp, '=');
    const auto d = kv.get_doubles("dims");
    const auto s = kv.get_doubles("spacing");
    if (d.size() != 3 || s.size() != 3) throw Error(ErrorCode::MissingHeader, "dims/spacing need 3 values");
    for (double x : d) {
      if (x < 1 || x != std::floor(x)) throw Error(ErrorCode::DimMismatch, "dims must be positive integers");
    }
    h.dims = {static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]), static_cast<std::size_t>(d[2])};
    h.spacing = {s[0], s[1], s[2]};
    h.channels = static_cast<int>(kv.get_int("channels"));
    const auto& dt = kv.get("dtype");
    if (dt == "f32") {
      h.dtype = DType::F32;
    } else if (dt == "u8") {
      h.dtype = DType::U8;
    } else {
      throw Error(ErrorCode::MissingHeader, "unknown dtype '" + dt + "'");
    }
    h.crc32 = static_cast<std::uint32_t>(std::stoul(kv.get("crc32"), nullptr, 16));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DimMismatch) throw;
    throw Error(ErrorCode::MissingHeader, hp + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::MissingHeader, hp + ": " + e.what());
  }
  if (h.channels < 1) throw Error(ErrorCode::DimMismatch, "channels must be >= 1");
  validate_geometry(h.dims, h.spacing);
  return h;
}

void save_volume(const Volume& v, const std::string& path) {
  v.validate();
  write_grid(path, v.dims, v.spacing, 1, DType::F32, f32_payload(v.data));
}

Volume load_volume(const std::string& path) {
  auto raw = read_raw(path, DType::F32);
  if (raw.header.channels != 1) throw Error(ErrorCode::DimMismatch, path + ": a volume has exactly one channel");
  Volume v;
  v.dims = raw.header.dims;
  v.spacing = raw.header.spacing;
  v.data = decode_f32(raw.payload);
  return v;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  validate_geometry(labels.dims, labels.spacing);
  if (labels.data.size() != labels.dims.voxels()) throw Error(ErrorCode::DimMismatch, "label data length != D*H*W");
  write_grid(path, labels.dims, labels.spacing, 1, DType::U8,
             std::string(reinterpret_cast<const char*>(labels.data.data()), labels.data.size()));
}

LabelMap load_labels(const std::string& path) {
  auto raw = read_raw(path, DType::U8);
  if (raw.header.channels != 1) throw Error(ErrorCode::DimMismatch, path + ": a label map has exactly one channel");
  LabelMap m;
  m.dims = raw.header.dims;
  m.spacing = raw.header.spacing;
  m.data.assign(raw.payload.begin(), raw.payload.end());
  return m;
}

void save_logits(const LogitTensor& logits, const std::string& path) {
  logits.validate();
  write_grid(path, logits.dims, logits.spacing, logits.channels, DType::F32, f32_payload(logits.data));
}

LogitTensor load_logits(const std::string& path) {
  auto raw = read_raw(path, DType::F32);
  LogitTensor t;
  t.channels = raw.header.channels;
  t.dims = raw.header.dims;
  t.spacing = raw.header.spacing;
  t.data = decode_f32(raw.payload);
  return t;
}

}  // namespace textseg
