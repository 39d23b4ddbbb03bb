// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rrmoe/errors.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigTree ConfigTree::parse(const std::string& text) {
  ConfigTree tree;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    tree.values_[key] = value;
  }
  return tree;
}

ConfigTree ConfigTree::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> ConfigTree::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string ConfigTree::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::int64_t ConfigTree::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected an integer, got '" + *v + "'");
  return out;
}

double ConfigTree::get_double(const std::string& key, double fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + *v + "'");
  }
}

bool ConfigTree::get_bool(const std::string& key, bool fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + *v + "'");
}

void ConfigTree::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) throw ConfigError(k, "unknown key");
  }
}

std::string ConfigTree::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t ConfigTree::hash() const { return fnv1a64(canonical()); }

}  // namespace rrmoe
