// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented key=value run configuration covering both the model and the
// training loop. Blank lines and '#' comments are skipped; unknown keys are
// errors so configs cannot silently drift.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "vimoe/model.hpp"
#include "vimoe/train.hpp"

namespace vimoe {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool alpha_set = false;  // an explicit alpha wins over the per-task default

  // 0.01 for classification, 0.001 for segmentation unless the config says
  // otherwise.
  void apply_task_defaults(Task task) {
    model.task = task;
    if (!alpha_set) model.alpha = task == Task::segmentation ? 0.001 : 0.01;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw format_error("config: bad boolean '" + v + "' for " + key);
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (...) {
    throw format_error("config: bad integer '" + v + "' for " + key);
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (...) {
    throw format_error("config: bad number '" + v + "' for " + key);
  }
}

}  // namespace config_detail

inline ModelConfig preset_by_name(const std::string& name) {
  if (name == "vit-tiny-lab") return vit_tiny_lab();
  if (name == "vit-s-14") return vit_s_14();
  throw format_error("unknown preset '" + name + "' (expected vit-tiny-lab or vit-s-14)");
}

inline bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& value) {
  using namespace config_detail;
  if (key == "preset") {
    m = preset_by_name(value);
  } else if (key == "image_size") {
    m.image_size = parse_size(value, key);
  } else if (key == "patch_size") {
    m.patch_size = parse_size(value, key);
  } else if (key == "in_channels") {
    m.in_channels = parse_size(value, key);
  } else if (key == "embed_dim") {
    m.embed_dim = parse_size(value, key);
  } else if (key == "heads") {
    m.heads = parse_size(value, key);
  } else if (key == "depth") {
    m.depth = parse_size(value, key);
  } else if (key == "mlp_ratio") {
    m.mlp_ratio = parse_size(value, key);
  } else if (key == "num_classes") {
    m.num_classes = parse_size(value, key);
  } else if (key == "task") {
    if (value == "classification" || value == "cls")
      m.task = Task::classification;
    else if (value == "segmentation" || value == "seg")
      m.task = Task::segmentation;
    else
      throw format_error("config: bad task '" + value + "'");
  } else if (key == "moe_last_l") {
    m.moe_last_l = parse_size(value, key);
  } else if (key == "num_experts") {
    m.num_experts = parse_size(value, key);
  } else if (key == "top_k") {
    m.top_k = parse_size(value, key);
  } else if (key == "shared_expert") {
    m.shared_expert = parse_bool(value, key);
  } else if (key == "routing_mode") {
    if (value == "image")
      m.routing_mode = RoutingMode::image;
    else if (value == "token")
      m.routing_mode = RoutingMode::token;
    else
      throw format_error("config: bad routing_mode '" + value + "'");
  } else if (key == "renorm_mode") {
    if (value == "none")
      m.renorm_mode = RenormMode::none;
    else if (value == "topk")
      m.renorm_mode = RenormMode::topk;
    else
      throw format_error("config: bad renorm_mode '" + value + "'");
  } else if (key == "alpha") {
    m.alpha = parse_double(value, key);
  } else {
    return false;
  }
  return true;
}

inline bool apply_train_key(TrainConfig& t, const std::string& key, const std::string& value) {
  using namespace config_detail;
  if (key == "epochs") {
    t.epochs = parse_size(value, key);
  } else if (key == "batch_size") {
    t.batch_size = parse_size(value, key);
  } else if (key == "peak_lr") {
    t.peak_lr = parse_double(value, key);
  } else if (key == "weight_decay") {
    t.weight_decay = parse_double(value, key);
  } else if (key == "layer_decay") {
    t.layer_decay = parse_double(value, key);
  } else if (key == "warmup_epochs") {
    t.warmup_epochs = parse_double(value, key);
  } else if (key == "seed") {
    t.seed = parse_size(value, key);
  } else if (key == "eval_every") {
    t.eval_every = parse_size(value, key);
  } else if (key == "clip_norm") {
    t.clip_norm = parse_double(value, key);
  } else if (key == "log_routing") {
    if (value == "off")
      t.log_routing = LogRouting::off;
    else if (value == "final")
      t.log_routing = LogRouting::final_epoch;
    else if (value == "all")
      t.log_routing = LogRouting::all;
    else
      throw format_error("config: bad log_routing '" + value + "'");
  } else {
    return false;
  }
  return true;
}

inline RunConfig parse_run_config(std::istream& in, const std::string& origin) {
  RunConfig rc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw format_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = config_detail::trim(t.substr(0, eq));
    const std::string value = config_detail::trim(t.substr(eq + 1));
    if (!apply_model_key(rc.model, key, value) && !apply_train_key(rc.train, key, value))
      throw format_error(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (key == "alpha") rc.alpha_set = true;
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw format_error("cannot open config " + path);
  return parse_run_config(f, path);
}

}  // namespace vimoe
