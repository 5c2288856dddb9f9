#pragma once

// Flat `key = value` run configuration with a fixed schema per subcommand.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ellip/csv.hpp"
#include "ellip/errors.hpp"

namespace ellip {

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace detail

class RunConfig {
 public:
  RunConfig(std::string command, std::vector<KeySpec> schema)
      : command_(std::move(command)), schema_(std::move(schema)) {
    for (const auto& k : schema_) values_[k.key] = k.default_value;
  }

  const std::string& command() const { return command_; }
  const std::vector<KeySpec>& schema() const { return schema_; }

  bool has_key(const std::string& key) const { return values_.count(key) != 0; }

  /// Reads `key = value` lines ('#' starts a comment line). Every schema key
  /// must appear; unknown or repeated keys are rejected.
  void load_text(const std::string& text, const std::string& origin = "config") {
    std::map<std::string, bool> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value", "");
      }
      const std::string key = detail::trim(std::string_view(t).substr(0, eq));
      const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
      if (!has_key(key)) throw UsageError("unknown config key '" + key + "'", key);
      if (seen[key]) throw UsageError("config key '" + key + "' given twice", key);
      seen[key] = true;
      values_[key] = value;
    }
    for (const auto& k : schema_)
      if (!seen[k.key]) throw UsageError("missing required config key '" + k.key + "'", k.key);
  }

  void load_file(const std::filesystem::path& path) {
    std::string text;
    try {
      text = csv::read_file(path);
    } catch (const FileError&) {
      throw UsageError("cannot read config file " + path.string(), "config");
    }
    load_text(text, path.string());
  }

  /// `key=value` override.
  void set_pair(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + assignment, assignment);
    set(detail::trim(std::string_view(assignment).substr(0, eq)),
        detail::trim(std::string_view(assignment).substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (!has_key(key)) throw UsageError("unknown config key '" + key + "'", key);
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'", key);
    return it->second;
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw UsageError("config key '" + key + "' is not a number: " + s, key);
    return v;
  }

  std::uint64_t get_uint(const std::string& key) const {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw UsageError("config key '" + key + "' is not a nonnegative integer: " + s, key);
    }
    return v;
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw UsageError("config key '" + key + "' is not a boolean: " + s, key);
  }

  /// Comma-separated numbers.
  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = detail::trim(item);
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(t, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != t.size()) throw UsageError("config key '" + key + "' has a bad list entry: " + t, key);
      out.push_back(v);
    }
    if (out.empty()) throw UsageError("config key '" + key + "' is empty", key);
    return out;
  }

  /// Loadable by load_text: every key in schema order.
  std::string echo() const {
    std::string out = "# ellip " + command_ + "\n";
    for (const auto& k : schema_) out += k.key + " = " + values_.at(k.key) + "\n";
    return out;
  }

 private:
  std::string command_;
  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

}  // namespace ellip
