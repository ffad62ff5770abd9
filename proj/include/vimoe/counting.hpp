// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact parameter and FLOPs accounting plus the routing-degree formula.
// Parameters are counted in closed form; the same decomposition drives both
// total and activated counts. FLOPs are multiply-accumulates over the linear
// maps (patch projection, qkv/proj, attention score and value products,
// expert and gate matmuls, head); norms, activations, and softmax are
// excluded.

#pragma once

#include <cstdint>
#include <string>

#include "vimoe/model.hpp"

namespace vimoe {

struct CountReport {
  std::uint64_t total_params = 0;
  std::uint64_t activated_params = 0;
  std::uint64_t flops = 0;

  // Table precision, 0.1M.
  static double round_millions(std::uint64_t v) {
    return static_cast<double>((v + 50'000) / 100'000) / 10.0;
  }
  double total_millions() const { return round_millions(total_params); }
  double activated_millions() const { return round_millions(activated_params); }
};

namespace counting_detail {

inline std::uint64_t ffn_params(const ModelConfig& c) {
  const std::uint64_t d = c.embed_dim, h = c.hidden_dim();
  return d * h + h + h * d + d;
}

inline std::uint64_t attn_params(const ModelConfig& c) {
  const std::uint64_t d = c.embed_dim;
  return d * 3 * d + 3 * d + d * d + d;
}

inline std::uint64_t norm_params(const ModelConfig& c) { return 2 * c.embed_dim; }

inline std::uint64_t embed_params(const ModelConfig& c) {
  const std::uint64_t d = c.embed_dim;
  const std::uint64_t patch_dim = c.in_channels * c.patch_size * c.patch_size;
  return patch_dim * d + d        // projection
         + d                      // [CLS]
         + c.token_count() * d;   // positions
}

inline std::uint64_t head_params(const ModelConfig& c) {
  return static_cast<std::uint64_t>(c.embed_dim) * c.num_classes + c.num_classes;
}

}  // namespace counting_detail

// include_head exists because reference tables do not state whether the
// classifier is counted; both variants are exact.
inline CountReport count_params(const ModelConfig& cfg, bool include_head = true) {
  cfg.validate();
  namespace cd = counting_detail;
  const std::uint64_t ffn = cd::ffn_params(cfg);
  const std::uint64_t gate = static_cast<std::uint64_t>(cfg.num_experts) * cfg.embed_dim;
  const std::uint64_t shared = cfg.shared_expert ? ffn : 0;

  std::uint64_t backbone = cd::embed_params(cfg) + cd::norm_params(cfg);  // embeddings + final norm
  backbone += cfg.depth * (2 * cd::norm_params(cfg) + cd::attn_params(cfg));
  if (include_head) backbone += cd::head_params(cfg);

  const std::uint64_t dense_blocks = cfg.depth - cfg.moe_last_l;
  CountReport r;
  r.total_params = backbone + dense_blocks * ffn +
                   cfg.moe_last_l * (cfg.num_experts * ffn + shared + gate);
  r.activated_params = backbone + dense_blocks * ffn +
                       cfg.moe_last_l * (cfg.top_k * ffn + shared + gate);
  return r;
}

// Multiply-accumulate count of one forward pass at the given resolution.
inline CountReport count_flops(const ModelConfig& cfg, std::size_t resolution) {
  cfg.validate();
  if (resolution % cfg.patch_size != 0)
    throw contract_error("resolution " + std::to_string(resolution) +
                         " not divisible by patch size " + std::to_string(cfg.patch_size));
  const std::uint64_t d = cfg.embed_dim, h = cfg.hidden_dim(), heads = cfg.heads;
  const std::uint64_t g = resolution / cfg.patch_size;
  const std::uint64_t p = g * g;       // patches
  const std::uint64_t t = p + 1;       // tokens
  const std::uint64_t hd = d / heads;
  const std::uint64_t patch_dim = cfg.in_channels * cfg.patch_size * cfg.patch_size;

  const std::uint64_t ffn_macs = 2 * t * d * h;
  const std::uint64_t attn_macs = t * d * 3 * d          // qkv
                                  + heads * t * t * hd   // scores
                                  + heads * t * t * hd   // attention x values
                                  + t * d * d;           // output projection
  const std::uint64_t gate_units = cfg.routing_mode == RoutingMode::image ? 1 : t;
  const std::uint64_t gate_macs = gate_units * cfg.num_experts * d;

  std::uint64_t total = p * patch_dim * d;  // patch projection
  total += cfg.depth * attn_macs;
  total += (cfg.depth - cfg.moe_last_l) * ffn_macs;
  total += cfg.moe_last_l *
           (cfg.top_k * ffn_macs + (cfg.shared_expert ? ffn_macs : 0) + gate_macs);
  total += (cfg.task == Task::classification ? 1 : p) * d * cfg.num_classes;  // head

  CountReport r = count_params(cfg);
  r.flops = total;
  return r;
}

// D = C(N, k)^L, the number of distinct cross-layer expert combinations.
// Saturates at the maximum representable value instead of wrapping.
inline std::uint64_t routing_degree(std::size_t n, std::size_t k, std::size_t l) {
  if (k < 1 || k > n) throw contract_error("routing_degree: k out of [1, N]");
  std::uint64_t choose = 1;
  for (std::size_t i = 1; i <= k; ++i)
    choose = choose * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  const std::uint64_t kMax = ~std::uint64_t{0};
  std::uint64_t degree = 1;
  for (std::size_t i = 0; i < l; ++i) {
    if (choose != 0 && degree > kMax / choose) return kMax;
    degree *= choose;
  }
  return degree;
}

// CSV row used by the CLI and scan outputs.
inline std::string count_report_csv_row(const ModelConfig& cfg, const CountReport& r) {
  std::string s;
  s += std::to_string(config_hash(cfg));
  s += "," + std::to_string(cfg.num_experts);
  s += "," + std::to_string(cfg.moe_last_l);
  s += "," + std::to_string(cfg.shared_expert ? 1 : 0);
  s += "," + std::to_string(cfg.top_k);
  s += "," + std::to_string(r.total_params);
  s += "," + std::to_string(r.activated_params);
  s += "," + std::to_string(r.flops);
  return s;
}

}  // namespace vimoe
