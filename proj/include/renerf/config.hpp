// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/pipeline.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace renerf {

// Carries the offending key so callers can report it.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message) : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Flat `key = value` settings. Keys inside a `[section]` are stored as
/// `section.key`; '#' starts a comment.
class Settings {
 public:
  static Settings parse(std::string_view text);
  static Settings load(const std::filesystem::path& path);

  // `key=value` override; unqualified keys resolve to top-level keys.
  void set(std::string_view assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }
  std::filesystem::path base_dir() const { return base_dir_; }

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_ = ".";
};

ExperimentConfig build_config(const Settings& settings);

// Canonical text listing every key and its value; parse + build_config reproduces the run.
std::string format_config(const Settings& settings);

// Every recognised key with its default value.
const std::vector<std::pair<std::string, std::string>>& default_settings();

}  // namespace renerf
