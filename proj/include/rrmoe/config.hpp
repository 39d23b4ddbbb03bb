// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Flat key=value configuration tree. Keys are dotted paths
// (`model.experts = 4`); `#` starts a comment. The canonical text form is
// sorted and whitespace-normalized so it can be hashed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace rrmoe {

class ConfigTree {
 public:
  static ConfigTree parse(const std::string& text);
  static ConfigTree load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  std::optional<std::string> raw(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ConfigError for the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  std::string canonical() const;
  std::uint64_t hash() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rrmoe
