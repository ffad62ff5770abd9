// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// ViMoE assembly: a pre-norm ViT backbone whose last L blocks carry MoE
// layers. Parameter initialization is keyed by (seed, parameter name), so a
// dense model and a MoE model built from the same seed share every backbone
// draw and the routed experts replicate the block's FFN exactly.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vimoe/moe.hpp"
#include "vimoe/rng.hpp"
#include "vimoe/tensor.hpp"
#include "vimoe/vit.hpp"

namespace vimoe {

enum class Task : std::uint8_t { classification = 0, segmentation = 1 };

struct ModelConfig {
  // backbone
  std::size_t image_size = 28;
  std::size_t patch_size = 7;
  std::size_t in_channels = 1;
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t depth = 6;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 8;
  Task task = Task::classification;
  // MoE placement; moe_last_l = 0 is the dense baseline
  std::size_t moe_last_l = 0;
  std::size_t num_experts = 4;
  std::size_t top_k = 1;
  bool shared_expert = false;
  RoutingMode routing_mode = RoutingMode::image;
  RenormMode renorm_mode = RenormMode::topk;
  double alpha = 0.01;

  std::size_t hidden_dim() const { return mlp_ratio * embed_dim; }
  std::size_t token_count() const {
    return (image_size / patch_size) * (image_size / patch_size) + 1;
  }
  bool block_is_moe(std::size_t block) const { return block >= depth - moe_last_l; }

  PatchEmbedConfig patch_cfg() const { return {image_size, patch_size, in_channels, embed_dim}; }

  void validate() const {
    patch_cfg().validate();
    if (embed_dim % heads != 0) throw contract_error("embed_dim not divisible by heads");
    if (moe_last_l > depth)
      throw contract_error("moe_last_l " + std::to_string(moe_last_l) + " exceeds depth " +
                           std::to_string(depth));
    if (moe_last_l > 0) {
      if (num_experts < 1) throw contract_error("num_experts must be at least 1");
      if (top_k < 1 || top_k > num_experts) throw contract_error("top_k out of [1, N]");
    }
    if (num_classes < 1) throw contract_error("num_classes must be positive");
  }
};

// Desk-scale config used for training and gradient checks.
inline ModelConfig vit_tiny_lab() {
  ModelConfig c;
  c.image_size = 28;
  c.patch_size = 7;
  c.in_channels = 1;
  c.embed_dim = 32;
  c.heads = 4;
  c.depth = 6;
  c.mlp_ratio = 4;
  return c;
}

// Exact-count config; used by the counting paths only, never trained.
inline ModelConfig vit_s_14() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 14;
  c.in_channels = 3;
  c.embed_dim = 384;
  c.heads = 6;
  c.depth = 12;
  c.mlp_ratio = 4;
  c.num_classes = 1000;
  return c;
}

struct BlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  std::optional<FFNParams> ffn;       // dense block
  std::optional<MoELayerParams> moe;  // MoE block
};

struct ViMoEModel {
  ModelConfig cfg;
  PatchEmbedParams embed;
  std::vector<BlockParams> blocks;
  LayerNormParams ln_f;
  HeadParams head;

  // Block indices carrying MoE layers, ascending (shallow to deep).
  std::vector<std::size_t> moe_blocks() const {
    std::vector<std::size_t> out;
    for (std::size_t b = cfg.depth - cfg.moe_last_l; b < cfg.depth; ++b) out.push_back(b);
    return out;
  }

  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embed.proj_w", embed.proj_w);
    fn("embed.proj_b", embed.proj_b);
    fn("embed.cls", embed.cls);
    fn("embed.pos", embed.pos);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      BlockParams& blk = blocks[b];
      fn(pre + "ln1.gamma", blk.ln1.gamma);
      fn(pre + "ln1.beta", blk.ln1.beta);
      fn(pre + "attn.wqkv", blk.attn.wqkv);
      fn(pre + "attn.bqkv", blk.attn.bqkv);
      fn(pre + "attn.wproj", blk.attn.wproj);
      fn(pre + "attn.bproj", blk.attn.bproj);
      fn(pre + "ln2.gamma", blk.ln2.gamma);
      fn(pre + "ln2.beta", blk.ln2.beta);
      if (blk.ffn) {
        fn(pre + "ffn.w1", blk.ffn->w1);
        fn(pre + "ffn.b1", blk.ffn->b1);
        fn(pre + "ffn.w2", blk.ffn->w2);
        fn(pre + "ffn.b2", blk.ffn->b2);
      }
      if (blk.moe) {
        fn(pre + "moe.gate_w", blk.moe->gate_w);
        for (std::size_t e = 0; e < blk.moe->experts.size(); ++e) {
          const std::string ep = pre + "moe.expert" + std::to_string(e) + ".";
          fn(ep + "w1", blk.moe->experts[e].w1);
          fn(ep + "b1", blk.moe->experts[e].b1);
          fn(ep + "w2", blk.moe->experts[e].w2);
          fn(ep + "b2", blk.moe->experts[e].b2);
        }
        if (blk.moe->shared) {
          const std::string sp = pre + "moe.shared.";
          fn(sp + "w1", blk.moe->shared->w1);
          fn(sp + "b1", blk.moe->shared->b1);
          fn(sp + "w2", blk.moe->shared->w2);
          fn(sp + "b2", blk.moe->shared->b2);
        }
      }
    }
    fn("ln_f.gamma", ln_f.gamma);
    fn("ln_f.beta", ln_f.beta);
    fn("head.w", head.w);
    fn("head.b", head.b);
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_params([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

namespace detail {

inline Tensor init_normal(Shape shape, std::uint64_t seed, const std::string& name, double std_dev) {
  rng::Stream s(rng::combine(seed, rng::fnv1a(name)));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = s.normal() * std_dev;
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor init_const(Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor clone_param(const Tensor& src) {
  return Tensor::from(src.shape(), src.data(), true);
}

inline FFNParams init_ffn(const ModelConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  FFNParams f;
  f.w1 = init_normal({cfg.embed_dim, cfg.hidden_dim()}, seed, prefix + ".w1", 0.02);
  f.b1 = init_const({cfg.hidden_dim()}, 0.0);
  f.w2 = init_normal({cfg.hidden_dim(), cfg.embed_dim}, seed, prefix + ".w2", 0.02);
  f.b2 = init_const({cfg.embed_dim}, 0.0);
  return f;
}

}  // namespace detail

// Builds a model from scratch. Routed experts replicate the block's FFN
// weights exactly and the gate starts at zero, so routing is uniform and the
// top-k forward reproduces the dense forward at step 0. The shared expert
// copies w1/b1 but starts with a zero output projection; this keeps the
// initial network function equal to the dense baseline even when the shared
// expert is enabled.
inline ViMoEModel build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ViMoEModel m;
  m.cfg = cfg;

  const std::size_t d = cfg.embed_dim;
  m.embed.proj_w = detail::init_normal({cfg.patch_cfg().patch_dim(), d}, seed, "embed.proj_w", 0.02);
  m.embed.proj_b = detail::init_const({d}, 0.0);
  m.embed.cls = detail::init_normal({1, d}, seed, "embed.cls", 0.02);
  m.embed.pos = detail::init_normal({cfg.token_count(), d}, seed, "embed.pos", 0.02);

  m.blocks.resize(cfg.depth);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    BlockParams& blk = m.blocks[b];
    blk.ln1.gamma = detail::init_const({d}, 1.0);
    blk.ln1.beta = detail::init_const({d}, 0.0);
    blk.attn.wqkv = detail::init_normal({d, 3 * d}, seed, pre + "attn.wqkv", 0.02);
    blk.attn.bqkv = detail::init_const({3 * d}, 0.0);
    blk.attn.wproj = detail::init_normal({d, d}, seed, pre + "attn.wproj", 0.02);
    blk.attn.bproj = detail::init_const({d}, 0.0);
    blk.attn.heads = cfg.heads;
    blk.ln2.gamma = detail::init_const({d}, 1.0);
    blk.ln2.beta = detail::init_const({d}, 0.0);

    FFNParams base = detail::init_ffn(cfg, seed, pre + "ffn");
    const bool is_moe = b >= cfg.depth - cfg.moe_last_l;
    if (!is_moe) {
      blk.ffn = std::move(base);
    } else {
      MoELayerParams moe;
      moe.gate_w = detail::init_const({cfg.num_experts, d}, 0.0);
      moe.top_k = cfg.top_k;
      moe.renorm = cfg.renorm_mode;
      moe.experts.reserve(cfg.num_experts);
      for (std::size_t e = 0; e < cfg.num_experts; ++e) {
        FFNParams copy;
        copy.w1 = detail::clone_param(base.w1);
        copy.b1 = detail::clone_param(base.b1);
        copy.w2 = detail::clone_param(base.w2);
        copy.b2 = detail::clone_param(base.b2);
        moe.experts.push_back(std::move(copy));
      }
      if (cfg.shared_expert) {
        FFNParams sh;
        sh.w1 = detail::clone_param(base.w1);
        sh.b1 = detail::clone_param(base.b1);
        sh.w2 = detail::init_const({cfg.hidden_dim(), d}, 0.0);
        sh.b2 = detail::init_const({d}, 0.0);
        moe.shared = std::move(sh);
      }
      blk.moe = std::move(moe);
    }
  }

  m.ln_f.gamma = detail::init_const({d}, 1.0);
  m.ln_f.beta = detail::init_const({d}, 0.0);
  m.head.w = detail::init_normal({d, cfg.num_classes}, seed, "head.w", 0.02);
  m.head.b = detail::init_const({cfg.num_classes}, 0.0);
  return m;
}

// Forward trace of one item: logits plus the routing activity of each MoE
// block, shallow to deep.
struct ForwardResult {
  Tensor logits;  // [1 x C] classification, [T-1 x C] segmentation
  std::vector<std::size_t> moe_block_indices;
  std::vector<std::vector<GateDecision>> decisions;  // per MoE block, per routing unit
  std::vector<std::vector<Tensor>> prob_tensors;     // matching router distributions
};

inline ForwardResult forward(Tape& tape, ViMoEModel& m, const std::vector<float>& image) {
  ForwardResult out;
  Tensor x = patch_embed(tape, image, m.cfg.patch_cfg(), m.embed);
  for (std::size_t b = 0; b < m.cfg.depth; ++b) {
    BlockParams& blk = m.blocks[b];
    Tensor h_attn = attention(tape, x, blk.ln1, blk.attn);
    Tensor h = layernorm(tape, h_attn, blk.ln2.gamma, blk.ln2.beta);
    if (blk.ffn) {
      x = add(tape, h_attn, ffn_forward(tape, h, *blk.ffn));
    } else {
      MoEForwardResult r = moe_forward(tape, h, m.cfg.routing_mode, *blk.moe);
      x = add(tape, h_attn, r.output);
      out.moe_block_indices.push_back(b);
      out.decisions.push_back(std::move(r.decisions));
      out.prob_tensors.push_back(std::move(r.prob_tensors));
    }
  }
  Tensor xf = layernorm(tape, x, m.ln_f.gamma, m.ln_f.beta);
  if (m.cfg.task == Task::classification) {
    out.logits = classify_head(tape, slice_rows(tape, xf, 0, 1), m.head);
  } else {
    out.logits = seg_head(tape, slice_rows(tape, xf, 1, m.cfg.token_count()), m.head);
  }
  return out;
}

// Balance statistics of every MoE layer over a batch, kept on the tape so the
// auxiliary loss can backpropagate through the router probabilities.
struct BatchAuxState {
  std::vector<std::size_t> block_indices;
  std::vector<std::vector<std::uint64_t>> counts;  // per layer, per expert
  std::vector<Tensor> prob_sums;                   // per layer, [N] on tape
  std::uint64_t units = 0;                         // routing units per layer

  void absorb(Tape& tape, const ForwardResult& r) {
    if (block_indices.empty() && !r.moe_block_indices.empty()) {
      block_indices = r.moe_block_indices;
      counts.assign(block_indices.size(), {});
      prob_sums.assign(block_indices.size(), Tensor());
    }
    for (std::size_t l = 0; l < r.moe_block_indices.size(); ++l) {
      for (std::size_t u = 0; u < r.decisions[l].size(); ++u) {
        const GateDecision& d = r.decisions[l][u];
        if (counts[l].empty()) counts[l].assign(d.probs.size(), 0);
        counts[l][d.selected[0]] += 1;
        prob_sums[l] = prob_sums[l].defined() ? add(tape, prob_sums[l], r.prob_tensors[l][u])
                                              : r.prob_tensors[l][u];
      }
    }
    if (!r.moe_block_indices.empty()) units += r.decisions[0].size();
  }
};

// Sum of the per-layer balancing losses, each already scaled by alpha.
// A model with no MoE layers contributes a constant zero.
inline Tensor total_aux_loss(Tape& tape, const BatchAuxState& st, double alpha) {
  Tensor acc;
  for (std::size_t l = 0; l < st.block_indices.size(); ++l) {
    Tensor term = load_balance_loss(tape, st.counts[l], st.prob_sums[l], st.units, alpha);
    acc = acc.defined() ? add(tape, acc, term) : term;
  }
  if (!acc.defined()) acc = Tensor::zeros({1});
  return acc;
}

// Canonical config string; hashed into logs and reports.
inline std::string config_string(const ModelConfig& c) {
  std::string s;
  s += "img=" + std::to_string(c.image_size);
  s += ",patch=" + std::to_string(c.patch_size);
  s += ",ch=" + std::to_string(c.in_channels);
  s += ",dim=" + std::to_string(c.embed_dim);
  s += ",heads=" + std::to_string(c.heads);
  s += ",depth=" + std::to_string(c.depth);
  s += ",mlp=" + std::to_string(c.mlp_ratio);
  s += ",classes=" + std::to_string(c.num_classes);
  s += ",task=" + std::to_string(static_cast<int>(c.task));
  s += ",L=" + std::to_string(c.moe_last_l);
  s += ",N=" + std::to_string(c.num_experts);
  s += ",k=" + std::to_string(c.top_k);
  s += ",shared=" + std::to_string(c.shared_expert ? 1 : 0);
  s += ",route=" + std::to_string(static_cast<int>(c.routing_mode));
  s += ",renorm=" + std::to_string(static_cast<int>(c.renorm_mode));
  return s;
}

inline std::uint64_t config_hash(const ModelConfig& c) { return rng::fnv1a(config_string(c)); }

}  // namespace vimoe
