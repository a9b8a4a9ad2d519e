#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "fuse3d/model.hpp"
#include "fuse3d/schedule.hpp"

namespace fuse3d {

namespace detail {

inline std::int64_t cfg_int(const nlohmann::json& v, const std::string& key) {
  FUSE3D_CHECK_CFG(v.is_number_integer(), "config key '", key,
                   "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::size_t cfg_size(const nlohmann::json& v, const std::string& key) {
  const std::int64_t i = cfg_int(v, key);
  FUSE3D_CHECK_CFG(i >= 0, "config key '", key, "' must be >= 0");
  return std::size_t(i);
}

inline double cfg_num(const nlohmann::json& v, const std::string& key) {
  FUSE3D_CHECK_CFG(v.is_number(), "config key '", key, "' must be a number");
  return v.get<double>();
}

inline std::array<std::size_t, 3> cfg_patch(const nlohmann::json& v) {
  FUSE3D_CHECK_CFG(v.is_array() && v.size() == 3,
                   "config key 'patch' must be an array of 3 extents");
  std::array<std::size_t, 3> p{};
  for (int i = 0; i < 3; ++i) p[std::size_t(i)] = cfg_size(v[i], "patch");
  return p;
}

// Applies one flat key; "seed" feeds both configs. Returns false for keys
// that belong to neither.
inline bool apply_config_key(ModelConfig& m, TrainConfig& t,
                             const std::string& k, const nlohmann::json& v) {
  if (k == "variant") {
    FUSE3D_CHECK_CFG(v.is_string(), "config key 'variant' must be a string");
    m.variant = variant_from_name(v.get<std::string>());
  } else if (k == "base_filters") {
    m.base_filters = cfg_size(v, k);
  } else if (k == "focal_levels") {
    m.focal.num_levels = cfg_size(v, k);
  } else if (k == "focal_kernel") {
    m.focal.kernel = cfg_size(v, k);
  } else if (k == "dense_layers") {
    m.dense.layers = cfg_size(v, k);
  } else if (k == "growth_rate") {
    m.dense.growth = cfg_size(v, k);
  } else if (k == "patch") {
    m.patch = cfg_patch(v);
  } else if (k == "seed") {
    const std::int64_t s = cfg_int(v, k);
    FUSE3D_CHECK_CFG(s >= 0, "config key 'seed' must be >= 0");
    m.seed = std::uint64_t(s);
    t.seed = std::uint64_t(s);
  } else if (k == "iterations") {
    t.iterations = cfg_int(v, k);
  } else if (k == "val_every") {
    t.val_every = cfg_int(v, k);
  } else if (k == "lr_base") {
    t.lr_base = cfg_num(v, k);
  } else if (k == "lr_max") {
    t.lr_max = cfg_num(v, k);
  } else if (k == "batch") {
    t.batch = cfg_int(v, k);
  } else if (k == "split") {
    t.split = cfg_num(v, k);
  } else {
    return false;
  }
  return true;
}

}  // namespace detail

// Flat JSON object mirroring ModelConfig + TrainConfig field names. Missing
// keys keep their defaults; unknown keys are rejected.
inline std::pair<ModelConfig, TrainConfig> parse_config(
    const nlohmann::json& j) {
  FUSE3D_CHECK_CFG(j.is_object(), "config must be a JSON object");
  ModelConfig m;
  TrainConfig t;
  for (const auto& [k, v] : j.items())
    FUSE3D_CHECK_CFG(detail::apply_config_key(m, t, k, v),
                     "unknown config key '", k, "'");
  check_model_config(m);
  check_train_config(t);
  return {m, t};
}

inline std::pair<ModelConfig, TrainConfig> load_config(
    const std::string& path) {
  std::ifstream in(path);
  FUSE3D_CHECK_DATA(in.good(), "cannot open config file '", path, "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    raise<ConfigError>("config '", path, "' is not valid JSON: ", e.what());
  }
  return parse_config(j);
}

// The model subset of the flat schema, as stored in checkpoint manifests.
inline nlohmann::json model_config_json(const ModelConfig& m) {
  return nlohmann::json{{"variant", variant_name(m.variant)},
                        {"base_filters", m.base_filters},
                        {"focal_levels", m.focal.num_levels},
                        {"focal_kernel", m.focal.kernel},
                        {"dense_layers", m.dense.layers},
                        {"growth_rate", m.dense.growth},
                        {"patch", m.patch},
                        {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  FUSE3D_CHECK_CFG(j.is_object(), "model config must be a JSON object");
  ModelConfig m;
  TrainConfig scratch;
  for (const auto& [k, v] : j.items()) {
    FUSE3D_CHECK_CFG(detail::apply_config_key(m, scratch, k, v) &&
                         k != "iterations" && k != "val_every" &&
                         k != "lr_base" && k != "lr_max" && k != "batch" &&
                         k != "split",
                     "unknown model config key '", k, "'");
  }
  check_model_config(m);
  return m;
}

inline nlohmann::json full_config_json(const ModelConfig& m,
                                       const TrainConfig& t) {
  nlohmann::json j = model_config_json(m);
  j["iterations"] = t.iterations;
  j["val_every"] = t.val_every;
  j["lr_base"] = t.lr_base;
  j["lr_max"] = t.lr_max;
  j["batch"] = t.batch;
  j["split"] = t.split;
  return j;
}

}  // namespace fuse3d
