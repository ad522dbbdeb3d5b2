#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lanesnn/error.hpp"

namespace lanesnn {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Flat `key = value` lines. `#` starts a comment; blank lines are skipped.
// Keys are normalized to lower case with '_' replaced by '-'.
inline std::vector<ConfigEntry> parse_config(std::istream& in) {
  std::vector<ConfigEntry> out;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(line_no), "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no), "empty key");
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    for (char& c : key) {
      if (c == '_') c = '-';
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (!seen.insert(key).second) throw ParseError("line " + std::to_string(line_no), "duplicate key '" + key + "'");
    out.push_back({std::move(key), std::move(value), line_no});
  }
  return out;
}

inline std::vector<ConfigEntry> load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path.string());
  return parse_config(in);
}

}  // namespace lanesnn
