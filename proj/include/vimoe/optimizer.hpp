// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, layer-wise learning-rate decay, and a
// linear-warmup cosine schedule. Weight decay applies to matrices only;
// biases, norms, and gates keep their scale.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vimoe/errors.hpp"
#include "vimoe/model.hpp"
#include "vimoe/tensor.hpp"

namespace vimoe {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double layer_decay = 0.65;  // multiplicative per-block factor
};

struct ParamSlot {
  std::string name;
  Tensor tensor;
  std::size_t decay_exponent = 0;  // lr multiplier is layer_decay^exponent
  bool decayed = true;             // participates in weight decay
  std::vector<double> m, v;        // Adam moments
};

// Depth-graded exponents: the head, final norm, and every gate train at full
// rate; block b decays by depth-1-b; the embeddings sit one step below the
// shallowest block.
inline std::size_t decay_exponent_for(const std::string& name, std::size_t depth) {
  if (name.rfind("embed.", 0) == 0) return depth;
  if (name.rfind("head.", 0) == 0 || name.rfind("ln_f.", 0) == 0) return 0;
  if (name.rfind("block", 0) == 0) {
    const std::size_t dot = name.find('.');
    const std::size_t block = std::stoul(name.substr(5, dot - 5));
    if (name.find(".moe.gate_w") != std::string::npos) return 0;
    return depth - 1 - block;
  }
  return 0;
}

inline std::vector<ParamSlot> make_slots(ViMoEModel& model) {
  std::vector<ParamSlot> slots;
  model.visit_params([&](const std::string& name, Tensor& t) {
    ParamSlot s;
    s.name = name;
    s.tensor = t;
    s.decay_exponent = decay_exponent_for(name, model.cfg.depth);
    s.decayed = t.rank() >= 2;
    s.m.assign(t.size(), 0.0);
    s.v.assign(t.size(), 0.0);
    slots.push_back(std::move(s));
  });
  return slots;
}

// Linear warmup to the peak, then cosine to zero. step counts from zero.
inline double schedule_lr(double peak, std::size_t step, std::size_t warmup_steps,
                          std::size_t total_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales every gradient by min(1, max_norm / ||g||); returns the global norm.
inline double clip_global_norm(std::vector<ParamSlot>& slots, double max_norm) {
  double sq = 0.0;
  for (ParamSlot& s : slots) {
    if (s.tensor.grad().empty()) continue;
    for (double g : s.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (ParamSlot& s : slots)
      for (double& g : s.tensor.grad()) g *= f;
  }
  return norm;
}

class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<ParamSlot> slots) : cfg_(cfg), slots_(std::move(slots)) {}

  std::vector<ParamSlot>& slots() { return slots_; }
  std::size_t steps_taken() const { return t_; }

  void step(double lr) {
    t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (ParamSlot& s : slots_) {
      auto& grad = s.tensor.grad();
      if (grad.empty()) continue;
      const double lr_p = lr * std::pow(cfg_.layer_decay, static_cast<double>(s.decay_exponent));
      const double wd = s.decayed ? cfg_.weight_decay : 0.0;
      auto& p = s.tensor.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g))
          throw numeric_error("non-finite gradient in " + s.name + "[" + std::to_string(i) + "]");
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p[i] -= lr_p * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * p[i]);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<ParamSlot> slots_;
  std::size_t t_ = 0;
};

}  // namespace vimoe
