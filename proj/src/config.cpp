#include "afn/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "afn/textio.hpp"

namespace afn::cli {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Registry of every known key with its default: the canned synthetic task
// plus the standard training hyperparameters.
constexpr std::array<KeyDefault, 28> kRegistry{{
    {"seed", "0"},
    {"data.source_csv", ""},
    {"data.target_csv", ""},
    {"data.k_classes", "4"},
    {"data.dim", "16"},
    {"data.samples_per_domain", "2000"},
    {"data.class_radius", "4"},
    {"data.noise_sigma", "1.2"},
    {"data.rotation_deg", "30"},
    {"data.scale", "0.5"},
    {"data.translation", ""},
    {"data.seed", "0"},
    {"data.keep", ""},
    {"model.g_widths", "64,64"},
    {"model.embedding_size", "64"},
    {"model.dropout_p", "0.5"},
    {"objective.variant", "safn"},
    {"objective.lambda", "0.05"},
    {"objective.r", "25"},
    {"objective.delta_r", "1"},
    {"objective.ent_weight", "0"},
    {"train.learning_rate", "0.001"},
    {"train.momentum", "0.9"},
    {"train.epochs", "200"},
    {"train.batch_size", "32"},
    {"checkpoint", ""},
    {"robustness.l_percent", "5"},
    {"robustness.eval_fraction", "0.5"},
}};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

Config Config::defaults() {
  Config cfg;
  for (const auto& [key, value] : kRegistry) {
    cfg.values_[key] = value;
  }
  return cfg;
}

bool Config::is_known_key(const std::string& key) {
  for (const auto& entry : kRegistry) {
    if (key == entry.key) return true;
  }
  return false;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + " line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + " line " + std::to_string(line_no) + ": empty key");
    }
    out[key] = value;
  }
  return out;
}

void Config::load_file(const std::string& path) {
  for (const auto& [key, value] : parse_kv_file(path)) {
    set(key, value);
  }
}

void Config::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  values_[key] = value;
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  return it->second;
}

double Config::get_double(const std::string& key) const {
  try {
    return parse_double(raw(key), key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t Config::get_size(const std::string& key) const {
  long long v = 0;
  try {
    v = parse_int(raw(key), key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (v < 0) throw ConfigError(key + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& raw_value = raw(key);
  std::uint64_t v = 0;
  const auto res =
      std::from_chars(raw_value.data(), raw_value.data() + raw_value.size(), v);
  if (res.ec != std::errc() || res.ptr != raw_value.data() + raw_value.size()) {
    throw ConfigError("expected an unsigned integer for " + key + ", got '" +
                      raw_value + "'");
  }
  return v;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

bool Config::empty(const std::string& key) const { return trim(raw(key)).empty(); }

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) {
    try {
      out.push_back(parse_double(item, key));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(raw(key))) {
    try {
      out.push_back(static_cast<int>(parse_int(item, key)));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (int v : get_int_list(key)) {
    if (v < 0) throw ConfigError(key + " entries must be nonnegative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string Config::to_text() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) {
    out << key << " = " << value << '\n';
  }
  return out.str();
}

}  // namespace afn::cli
