#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/io.hpp"

namespace biozsl {

// Plain-text configuration: one "section.key = value" per line, '#' comments.
class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text) {
    ConfigMap cfg;
    const std::vector<std::string> lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string line = lines[i];
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(i + 1) + ": expected 'section.key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || key.find('.') == std::string::npos) {
        throw ConfigError("config line " + std::to_string(i + 1) + ": key must look like 'section.key'");
      }
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static ConfigMap parse_file(const std::filesystem::path& path) {
    try {
      return parse(read_file(path));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, std::string fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return parse_double(it->second, key);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return parse_int(it->second, key);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& part : split(it->second, ',')) {
      try {
        out.push_back(parse_double(trim(part), key));
      } catch (const FormatError& e) {
        throw ConfigError(e.what());
      }
    }
    return out;
  }

  std::vector<std::uint64_t> get_u64s(const std::string& key, std::vector<std::uint64_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::uint64_t> out;
    for (const std::string& part : split(it->second, ',')) {
      try {
        out.push_back(static_cast<std::uint64_t>(parse_int(trim(part), key)));
      } catch (const FormatError& e) {
        throw ConfigError(e.what());
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace biozsl
