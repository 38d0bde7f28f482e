#pragma once

// Checkpoint directory layout:
//   manifest      key=value text (kind, dim, counts, seed, format-version, table shapes)
//   <table>.bin   little-endian float64, row-major, no header; one per non-empty table

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mulde/error.hpp"
#include "mulde/keyvalue.hpp"
#include "mulde/models.hpp"
#include "mulde/table.hpp"

namespace mulde {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelState model;
  // Relation-scaling matrix of a distilled student, when present.
  std::optional<Table> w_rel;
};

namespace detail {

inline void write_table_le(const std::filesystem::path& path, const Table& t) {
  std::vector<char> bytes(t.size() * 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(t.values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

inline Table read_table_le(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  Table t(rows, cols);
  if (t.empty()) return t;
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IntegrityError("missing table file " + path.string());
  if (size != t.size() * 8) {
    throw IntegrityError(path.string() + ": expected " + std::to_string(t.size() * 8) + " bytes, found " +
                         std::to_string(size));
  }
  std::vector<unsigned char> bytes(size);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IntegrityError("failed reading " + path.string());
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    t.values[i] = std::bit_cast<double>(bits);
  }
  return t;
}

inline std::string shape_string(const Table& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline std::pair<std::size_t, std::size_t> parse_shape(const std::string& s, const std::string& key) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return {std::stoull(s.substr(0, x)), std::stoull(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw IntegrityError("manifest: bad shape '" + s + "' for " + key);
  }
}

inline std::string require(const KeyValues& kv, const std::string& key) {
  auto v = lookup(kv, key);
  if (!v) throw IntegrityError("manifest: missing key '" + key + "'");
  return *v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos, 0);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IntegrityError("manifest: bad integer '" + s + "' for " + key);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ModelState& m,
                            const Table* w_rel = nullptr) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv["format-version"] = std::to_string(kCheckpointFormatVersion);
  kv["kind"] = m.kind.name();
  kv["dim"] = std::to_string(m.dim);
  kv["num_entities"] = std::to_string(m.num_entities);
  kv["num_relations"] = std::to_string(m.num_relations);
  kv["seed"] = std::to_string(m.seed);
  kv["vocab_hash"] = std::to_string(m.vocab_hash);
  kv["biases"] = m.options.biases ? "1" : "0";
  kv["global_curvature"] = m.options.global_curvature ? "1" : "0";
  kv["direct_ball"] = m.options.direct_ball ? "1" : "0";
  for (const auto& [name, table] : m.tables()) {
    kv["table." + name] = detail::shape_string(*table);
    if (!table->empty()) detail::write_table_le(dir / (name + ".bin"), *table);
  }
  if (w_rel) {
    kv["table.w_rel"] = detail::shape_string(*w_rel);
    detail::write_table_le(dir / "w_rel.bin", *w_rel);
  }
  write_key_values(dir / "manifest", kv);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("checkpoint directory not found: " + dir.string());
  const auto manifest_path = dir / "manifest";
  if (!std::filesystem::exists(manifest_path)) throw IntegrityError("missing manifest in " + dir.string());
  const KeyValues kv = read_key_values(manifest_path);

  const auto version = detail::require(kv, "format-version");
  if (version != std::to_string(kCheckpointFormatVersion)) {
    throw VersionError("unsupported checkpoint format-version " + version + " (this build reads " +
                       std::to_string(kCheckpointFormatVersion) + ")");
  }
  Checkpoint ck;
  ModelState& m = ck.model;
  try {
    m.kind = ModelKind::parse(detail::require(kv, "kind"));
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  m.dim = detail::parse_u64(detail::require(kv, "dim"), "dim");
  m.num_entities = detail::parse_u64(detail::require(kv, "num_entities"), "num_entities");
  m.num_relations = detail::parse_u64(detail::require(kv, "num_relations"), "num_relations");
  m.seed = detail::parse_u64(detail::require(kv, "seed"), "seed");
  m.vocab_hash = detail::parse_u64(detail::require(kv, "vocab_hash"), "vocab_hash");
  m.options.biases = lookup(kv, "biases").value_or("1") == "1";
  m.options.global_curvature = lookup(kv, "global_curvature").value_or("0") == "1";
  m.options.direct_ball = lookup(kv, "direct_ball").value_or("0") == "1";
  for (auto& [name, table] : m.tables()) {
    const auto [rows, cols] = detail::parse_shape(detail::require(kv, "table." + name), name);
    *table = detail::read_table_le(dir / (name + ".bin"), rows, cols);
  }
  if (m.entity.rows != m.num_entities || m.entity.cols != m.dim) {
    throw IntegrityError("manifest: entity table shape disagrees with num_entities/dim");
  }
  if (auto s = lookup(kv, "table.w_rel")) {
    const auto [rows, cols] = detail::parse_shape(*s, "w_rel");
    ck.w_rel = detail::read_table_le(dir / "w_rel.bin", rows, cols);
  }
  return ck;
}

}  // namespace mulde
