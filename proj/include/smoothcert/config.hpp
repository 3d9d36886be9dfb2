// JSON experiment configuration: defaults, strict validation, dotted-path
// overrides, and a content hash that ignores volatile fields.
#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "smoothcert/util.hpp"

namespace smoothcert {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Every known key with its default value. Validation is driven off this
// object, so adding a field here is all it takes to extend the schema.
inline json default_config() {
  return json{
      {"seed", 0},
      {"output_dir", "out"},
      {"data",
       {{"dataset_path", ""},
        {"classes", 4},
        {"per_class", 75},
        {"hw", 16},
        {"test_fraction", 0.2}}},
      {"model", {{"width", 64}, {"checkpoint_path", ""}, {"init_seed", 0}}},
      {"train",
       {{"regime", "clean"},
        {"epochs", 30},
        {"batch_size", 32},
        {"lr", 0.05},
        {"momentum", 0.9},
        {"weight_decay", 0.0005},
        {"decay_at", {0.5, 0.75}},
        {"decay_factor", 0.1},
        {"val_fraction", 0.2},
        {"gauss_sigma", 0.0},
        {"early_stop", true},
        {"attack_bn_mode", "train"}}},
      {"attack",
       {{"norm", "linf"},
        {"epsilon", 0.03},
        {"steps", 10},
        {"step_size", 0.0},
        {"random_start", true},
        {"eot_m", 1},
        {"eot_perturb", "uniform"}}},
      {"smoothing",
       {{"sigma", 0.25},
        {"n0", 100},
        {"n", 10000},
        {"alpha", 0.001},
        {"mc_batch", 256},
        {"max_examples", 128},
        {"exclude_self", false},
        {"radius_grid_max", 1.0},
        {"radius_grid_step", 0.05}}},
      {"adapt", {{"rho", -1.0}, {"batch_size", 128}, {"blend", "stddev"}}},
      {"corruption", {{"reference_table_path", ""}, {"rmce", true}}},
      {"grad_map", {{"indices", {0, 1, 2, 3}}}},
      {"sweep",
       {{"command", "eval-noise"},
        {"param", "smoothing.sigma"},
        {"values", json::array()}}},
  };
}

namespace detail {

inline bool types_compatible(const json& schema_v, const json& user_v) {
  if (schema_v.is_number() && user_v.is_number()) return true;
  if (schema_v.is_array() && user_v.is_array()) return true;
  return schema_v.type() == user_v.type();
}

inline void validate_keys(const json& user, const json& schema,
                          const std::string& prefix) {
  if (!user.is_object())
    throw ConfigError("config: expected object at '" +
                      (prefix.empty() ? std::string("<root>") : prefix) + "'");
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key()))
      throw ConfigError("config: unknown key '" + path + "'");
    const json& sv = schema.at(it.key());
    if (sv.is_object()) {
      validate_keys(it.value(), sv, path);
    } else if (!types_compatible(sv, it.value())) {
      throw ConfigError("config: wrong type for '" + path + "' (expected " +
                        std::string(sv.type_name()) + ", got " +
                        std::string(it.value().type_name()) + ")");
    }
  }
}

inline void deep_merge(json& base, const json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) &&
        base.at(it.key()).is_object()) {
      deep_merge(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

inline void strip_volatile(json& j) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end();) {
    const std::string& k = it.key();
    bool is_path = k.size() >= 5 && k.compare(k.size() - 5, 5, "_path") == 0;
    if (k == "output_dir" || is_path) {
      it = j.erase(it);
    } else {
      strip_volatile(it.value());
      ++it;
    }
  }
}

}  // namespace detail

// Validates `user` against the schema (unknown keys and gross type
// mismatches rejected) and returns defaults overlaid with `user`.
inline json resolve_config(const json& user) {
  json cfg = default_config();
  detail::validate_keys(user, cfg, "");
  detail::deep_merge(cfg, user);
  return cfg;
}

inline json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  json user;
  try {
    user = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse failure in '" + path + "': " + e.what());
  }
  return resolve_config(user);
}

// Applies one `a.b.c=value` override in place. The path must name an
// existing leaf; the value is parsed as JSON, falling back to a string.
inline void apply_override(json& cfg, const std::string& keyval) {
  size_t eq = keyval.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override: expected key=value, got '" + keyval + "'");
  std::string path = keyval.substr(0, eq);
  std::string raw = keyval.substr(eq + 1);

  json val = json::accept(raw) ? json::parse(raw) : json(raw);

  json* node = &cfg;
  size_t pos = 0;
  std::string walked;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string part = path.substr(pos, dot == std::string::npos
                                            ? std::string::npos
                                            : dot - pos);
    walked = walked.empty() ? part : walked + "." + part;
    if (part.empty() || !node->is_object() || !node->contains(part))
      throw ConfigError("override: unknown key '" + walked + "'");
    node = &node->at(part);
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object())
    throw ConfigError("override: '" + path + "' is a section, not a leaf");
  if (!detail::types_compatible(*node, val))
    throw ConfigError("override: wrong type for '" + path + "' (expected " +
                      std::string(node->type_name()) + ", got " +
                      std::string(val.type_name()) + ")");
  *node = val;
}

// Hash over the resolved config with output_dir and *_path keys removed,
// so reports agree across filesystem layouts. nlohmann::json orders object
// keys, which makes the dump canonical.
inline std::string config_hash(json cfg) {
  detail::strip_volatile(cfg);
  std::string dump = cfg.dump();
  return hex64(fnv1a64(dump.data(), dump.size()));
}

}  // namespace smoothcert
