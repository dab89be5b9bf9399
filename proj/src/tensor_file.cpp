#include "textseg/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

#include "textseg/error.hpp"
#include "textseg/volume_io.hpp"

namespace textseg {

static_assert(std::endian::native == std::endian::little, "payloads are little-endian");

void save_tensor_file(const std::string& path, const TensorFile& file) {
  std::size_t total = 0;
  std::string sizes;
  for (std::size_t i = 0; i < file.tensors.size(); ++i) {
    total += file.tensors[i].size();
    sizes += (i ? "," : "") + std::to_string(file.tensors[i].size());
  }
  std::string payload(total * sizeof(double), '\0');
  char* out = payload.data();
  for (const auto& t : file.tensors) {
    if (!t.empty()) std::memcpy(out, t.data(), t.size() * sizeof(double));
    out += t.size() * sizeof(double);
  }
  KeyValueFile hdr;
  for (const auto& [k, v] : file.header.entries()) {
    if (k != "sizes" && k != "crc32") hdr.add(k, v);
  }
  hdr.add("sizes", sizes);
  hdr.add("crc32", hex32(crc32_of({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()})));
  write_file(path, payload);
  hdr.write(header_path(path), '=');
}

TensorFile load_tensor_file(const std::string& path) {
  const std::string hp = header_path(path);
  if (!std::filesystem::exists(hp)) throw Error(ErrorCode::MissingHeader, "no header sidecar " + hp);
  TensorFile out;
  out.header = KeyValueFile::read(hp, '=');
  std::vector<std::size_t> sizes;
  try {
    if (!out.header.get("sizes").empty()) {
      for (const auto& s : split(out.header.get("sizes"), ',')) sizes.push_back(static_cast<std::size_t>(parse_int(s)));
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::BadCheckpoint, path + ": " + e.what());
  }
  std::size_t total = 0;
  for (auto n : sizes) total += n;
  const std::string payload = read_file(path);
  if (payload.size() != total * sizeof(double)) {
    throw Error(ErrorCode::BadChecksum, path + ": payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                            std::to_string(total * sizeof(double)));
  }
  const auto crc = crc32_of({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()});
  if (hex32(crc) != out.header.get("crc32")) throw Error(ErrorCode::BadChecksum, path + ": payload crc32 mismatch");
  const char* in = payload.data();
  for (auto n : sizes) {
    std::vector<double> t(n);
    if (n) std::memcpy(t.data(), in, n * sizeof(double));
    in += n * sizeof(double);
    out.tensors.push_back(std::move(t));
  }
  return out;
}

}  // namespace textseg
