#pragma once

// Flat key = value configuration with dotted keys.
//
//   # comment
//   seed = 3
//   [loss]            -> following keys are read as loss.<key>
//   gamma = 3.0
//
// Every key must be consumed by the run; leftovers are reported as unknown.

#include "sslhsic/common.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace sslhsic {

struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

inline bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
    if (!ok) return false;
  }
  return key.find("..") == std::string_view::npos;
}

}  // namespace detail

class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in{std::string(text)};
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string body = detail::trim(line);
      if (body.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (body.front() == '[') {
        if (body.back() != ']') throw ConfigError(where + ": unterminated section header");
        section = detail::trim(std::string_view(body).substr(1, body.size() - 2));
        if (!section.empty() && !detail::valid_key(section)) throw ConfigError(where + ": bad section name '" + section + "'");
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      std::string key = detail::trim(std::string_view(body).substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      if (!detail::valid_key(key)) throw ConfigError(where + ": bad key '" + key + "'");
      if (cfg.entries_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      cfg.entries_[key] = detail::unquote(detail::trim(std::string_view(body).substr(eq + 1)));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  /// Applies one `key=value` override, replacing any existing value.
  void set(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    if (!detail::valid_key(key)) throw ConfigError("--set: bad key '" + key + "'");
    entries_[key] = detail::unquote(detail::trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) {
    if (!mark(key)) return fallback;
    const std::string& v = entries_.at(key);
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
  }

  long long get_int(const std::string& key, long long fallback) {
    if (!mark(key)) return fallback;
    return parse_int(key, entries_.at(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    if (!mark(key)) return fallback;
    const std::string& v = entries_.at(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) {
    if (!mark(key)) return fallback;
    const std::string& v = entries_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  /// Comma-separated integers.
  std::vector<long long> get_int_list(const std::string& key, std::vector<long long> fallback) {
    if (!mark(key)) return fallback;
    std::vector<long long> out;
    std::stringstream ss(entries_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, detail::trim(item)));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  /// Comma-separated words.
  std::vector<std::string> get_string_list(const std::string& key, std::vector<std::string> fallback) {
    if (!mark(key)) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(entries_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(detail::trim(item));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

  /// Throws if any key was never read.
  void require_all_used() const {
    std::string unknown;
    for (const auto& [key, value] : entries_) {
      if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  bool mark(const std::string& key) {
    used_.insert(key);
    return entries_.count(key) > 0;
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> entries_;
  std::set<std::string> used_;
};

}  // namespace sslhsic
