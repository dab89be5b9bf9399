#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textseg {

/// Ordered key/value text records: one `key<sep>value` pair per line, `#`
/// starts a comment. Keys may repeat (e.g. several `organ:` lines).
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, char separator);
  static KeyValueFile read(const std::string& path, char separator);

  void set(const std::string& key, const std::string& value);
  void add(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  std::vector<std::string> get_all(const std::string& key) const;

  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  std::string serialize(char separator) const;
  void write(const std::string& path, char separator) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

/// Shortest round-trippable decimal text for a double.
std::string format_double(double v);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::string hex32(std::uint32_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace textseg
