#include "textseg/embedding.hpp"

#include <cmath>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/prompt.hpp"

namespace textseg {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void normalize_l2(std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::BadTableFormat, "embedding has zero norm");
  for (double& x : v) x /= norm;
}

}  // namespace

TextEmbedding embed_hashed(std::string_view text, std::size_t dim) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt has no alphanumeric tokens");
  std::vector<double> acc(dim, 0.0);
  for (const auto& tok : tokens) {
    SplitMix64 stream(fnv1a64(tok));
    for (std::size_t i = 0; i < dim; ++i) {
      acc[i] += static_cast<double>(stream.next() >> 11) * 0x1p-53 * 2.0 - 1.0;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (double& x : acc) x *= inv_n;
  normalize_l2(acc);
  return acc;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += ch;
  }
  return out;
}

EmbeddingTable EmbeddingTable::parse(std::string_view text) {
  EmbeddingTable table;
  const auto lines = split(text, '\n');
  std::size_t i = 0;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw Error(ErrorCode::BadTableFormat, "embedding table is empty");
  const std::string header = trim(lines[i]);
  if (header.rfind("E=", 0) != 0) throw Error(ErrorCode::BadTableFormat, "first line must be E=<dim>");
  try {
    const auto d = parse_int(header.substr(2));
    if (d < 1) throw Error(ErrorCode::BadTableFormat, "E must be positive");
    table.dim_ = static_cast<std::size_t>(d);
  } catch (const Error&) {
    throw Error(ErrorCode::BadTableFormat, "bad header '" + header + "'");
  }
  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto tab = lines[i].find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::BadTableFormat, "line " + std::to_string(i + 1) + " has no tab");
    std::vector<double> values;
    try {
      for (const auto& tok : split(normalize_whitespace(lines[i].substr(tab + 1)), ' ')) {
        values.push_back(parse_double(tok));
      }
    } catch (const Error&) {
      throw Error(ErrorCode::BadTableFormat, "line " + std::to_string(i + 1) + " has a non-numeric value");
    }
    if (values.size() != table.dim_) {
      throw Error(ErrorCode::BadTableFormat, "line " + std::to_string(i + 1) + " has " + std::to_string(values.size()) +
                                                 " values, expected " + std::to_string(table.dim_));
    }
    table.insert(lines[i].substr(0, tab), std::move(values));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::string& path) { return parse(read_file(path)); }

void EmbeddingTable::insert(const std::string& key, std::vector<double> values) {
  if (values.size() != dim_) throw Error(ErrorCode::BadTableFormat, "vector length != E");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::BadTableFormat, "non-finite embedding value");
  }
  table_[normalize_whitespace(key)] = std::move(values);
}

std::string EmbeddingTable::serialize() const {
  std::string out = "E=" + std::to_string(dim_) + "\n";
  for (const auto& [k, v] : table_) {
    out += k + "\t";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + format_double(v[i]);
    out += "\n";
  }
  return out;
}

const std::vector<double>* EmbeddingTable::find(const std::string& key) const {
  const auto it = table_.find(key);
  return it == table_.end() ? nullptr : &it->second;
}

TextEmbedding embed_lookup(std::string_view text, const EmbeddingTable& table) {
  const auto* v = table.find(normalize_whitespace(text));
  if (!v) throw Error(ErrorCode::KeyNotFound, "no embedding for '" + std::string(text) + "'");
  TextEmbedding out = *v;
  normalize_l2(out);
  return out;
}

EmbeddingBatch embed_batch(const std::vector<std::string>& texts, const TextEncoder& encoder) {
  EmbeddingBatch batch;
  batch.rows = texts.size();
  batch.dim = encoder.dim();
  batch.values.reserve(texts.size() * batch.dim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      const auto row = encoder.embed(texts[i]);
      batch.values.insert(batch.values.end(), row.begin(), row.end());
    } catch (const Error& e) {
      throw Error(e.code(), "batch index " + std::to_string(i) + ": " + e.what());
    }
  }
  return batch;
}

}  // namespace textseg
