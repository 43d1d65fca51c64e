#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afn/errors.hpp"

namespace afn::cli {

// Flat key/value configuration with dotted sections. Files hold one
// `key = value` pair per line ('#' starts a comment); --set flags override
// file values; unknown keys are errors.
class Config {
 public:
  // Defaults for every known key (the canned synthetic task and the standard
  // hyperparameters).
  static Config defaults();

  static bool is_known_key(const std::string& key);

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);  // validates key

  const std::string& raw(const std::string& key) const;

  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  bool empty(const std::string& key) const;

  // Comma-separated lists; an empty value is an empty list.
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;

  // Deterministic serialized form (sorted keys), used for manifests.
  std::string to_text() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// `key = value` lines, parsed leniently on whitespace.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

}  // namespace afn::cli
