#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "mulde/error.hpp"

namespace mulde {

// Flat `key=value` text, one pair per line; `#` starts a comment line.
using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError(source, line_no, "empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return parse_key_values(in, path.string());
}

inline void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::optional<std::string> lookup(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) return std::nullopt;
  return it->second;
}

}  // namespace mulde
