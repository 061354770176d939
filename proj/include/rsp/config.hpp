#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rsp/common.hpp"

namespace rsp {

// Flat key=value configuration resolved from three layers with fixed
// precedence: command-line override > profile value > built-in default.
// The default table doubles as the schema: setting a key it does not list
// is a config error, which keeps profiles and CLI flags typo-safe.
class Config {
 public:
  void set_default(const std::string& key, const std::string& value);
  void set_profile(const std::string& key, const std::string& value);
  void set_override(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;  // ConfigError if absent
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0
  std::vector<int> get_int_list(const std::string& key) const;     // comma-separated
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  // Which layer supplied the resolved value: default | profile | override.
  std::string source(const std::string& key) const;
  std::map<std::string, std::string> resolved() const;
  // Canonical sorted "key=value" lines; what manifests snapshot.
  std::string snapshot() const;

  const std::string& profile_name() const { return profile_name_; }
  void set_profile_name(std::string name) { profile_name_ = std::move(name); }

 private:
  std::map<std::string, std::string> defaults_, profile_, overrides_;
  std::string profile_name_;
};

// Every key with its desk-scale default; the schema all layers validate
// against.
Config default_config();

// Built-in profiles: breastpathq, camelyon16, kather, synthetic. The three
// dataset profiles carry the published hyperparameter-table values and
// inherit a shared base layer (epochs, schedule, weight decay); synthetic
// re-pins the desk-scale settings explicitly.
std::vector<std::string> profile_names();
void apply_profile(Config& cfg, const std::string& name);  // ConfigError on unknown

// One "key=value" item; used for CLI --set values and config-file lines.
std::pair<std::string, std::string> parse_kv(const std::string& text);
// key=value file: blank lines and '#' comments ignored; a "profile" line
// applies that profile, every other line becomes an override.
void apply_file(Config& cfg, const std::string& path);
void apply_overrides(Config& cfg, const std::vector<std::string>& kvs);

// Keys whose resolved values differ, sorted.
std::vector<std::string> config_diff(const Config& a, const Config& b);

}  // namespace rsp
