// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a manifest of named f64 tensors followed by their raw
// buffers. Offsets are relative to the start of the data section.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vimoe/io.hpp"
#include "vimoe/model.hpp"
#include "vimoe/tensor.hpp"

namespace vimoe {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

namespace ckpt_detail {
inline constexpr char kMagic[4] = {'V', 'I', 'M', 'O'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace ckpt_detail

inline void save_checkpoint(const std::vector<CheckpointEntry>& entries, const std::string& path) {
  io::Writer w;
  w.magic(ckpt_detail::kMagic);
  w.pod<std::uint32_t>(ckpt_detail::kVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const CheckpointEntry& e : entries) {
    w.str(e.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.pod<std::uint64_t>(d);
    w.pod<std::uint64_t>(offset);
    offset += e.data.size() * sizeof(double);
  }
  for (const CheckpointEntry& e : entries) w.pod_array(e.data.data(), e.data.size());
  w.to_file(path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(ckpt_detail::kMagic, "checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != ckpt_detail::kVersion)
    throw format_error(path + ": unsupported checkpoint version " + std::to_string(version) +
                       " at byte 4");
  const auto n = r.pod<std::uint32_t>();
  std::vector<CheckpointEntry> entries(n);
  std::vector<std::uint64_t> offsets(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    entries[i].name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    entries[i].shape.resize(rank);
    for (auto& d : entries[i].shape) d = r.pod<std::uint64_t>();
    offsets[i] = r.pod<std::uint64_t>();
  }
  const std::size_t data_start = r.pos();
  for (std::uint32_t i = 0; i < n; ++i) {
    if (data_start + offsets[i] != r.pos())
      throw format_error(path + ": manifest offset of '" + entries[i].name +
                         "' disagrees with layout at byte " + std::to_string(r.pos()));
    entries[i].data = r.pod_array<double>(shape_numel(entries[i].shape));
  }
  if (r.remaining() != 0)
    throw format_error(path + ": trailing bytes at " + std::to_string(r.pos()));
  return entries;
}

inline void save_model(ViMoEModel& m, const std::string& path) {
  std::vector<CheckpointEntry> entries;
  m.visit_params([&](const std::string& name, Tensor& t) {
    entries.push_back({name, t.shape(), t.data()});
  });
  save_checkpoint(entries, path);
}

// Builds a (possibly sparse) model whose backbone starts from a dense
// checkpoint of the same backbone shape. Routed experts replicate the
// checkpointed FFN of their block; the shared expert copies w1/b1 and keeps
// the zeroed output projection; gates stay zero. The built model therefore
// computes the checkpointed dense function at step 0.
inline ViMoEModel build_from_dense_checkpoint(const ModelConfig& cfg, std::uint64_t seed,
                                              const std::string& dense_ckpt_path);

// Loads tensors by name into an already built model; shapes must agree.
inline void load_model(ViMoEModel& m, const std::string& path) {
  const auto entries = load_checkpoint(path);
  std::size_t used = 0;
  m.visit_params([&](const std::string& name, Tensor& t) {
    for (const CheckpointEntry& e : entries) {
      if (e.name != name) continue;
      if (e.shape != t.shape())
        throw format_error(path + ": tensor '" + name + "' has shape " + shape_str(e.shape) +
                           ", model expects " + shape_str(t.shape()));
      t.data() = e.data;
      ++used;
      return;
    }
    throw format_error(path + ": missing tensor '" + name + "'");
  });
  if (used != entries.size())
    throw format_error(path + ": checkpoint carries " + std::to_string(entries.size() - used) +
                       " tensors unknown to this model");
}

inline ViMoEModel build_from_dense_checkpoint(const ModelConfig& cfg, std::uint64_t seed,
                                              const std::string& dense_ckpt_path) {
  ModelConfig dense_cfg = cfg;
  dense_cfg.moe_last_l = 0;
  dense_cfg.shared_expert = false;
  ViMoEModel dense = build(dense_cfg, seed);
  load_model(dense, dense_ckpt_path);

  ViMoEModel m = build(cfg, seed);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const FFNParams& src = *dense.blocks[b].ffn;
    BlockParams& blk = m.blocks[b];
    blk.ln1.gamma.data() = dense.blocks[b].ln1.gamma.data();
    blk.ln1.beta.data() = dense.blocks[b].ln1.beta.data();
    blk.attn.wqkv.data() = dense.blocks[b].attn.wqkv.data();
    blk.attn.bqkv.data() = dense.blocks[b].attn.bqkv.data();
    blk.attn.wproj.data() = dense.blocks[b].attn.wproj.data();
    blk.attn.bproj.data() = dense.blocks[b].attn.bproj.data();
    blk.ln2.gamma.data() = dense.blocks[b].ln2.gamma.data();
    blk.ln2.beta.data() = dense.blocks[b].ln2.beta.data();
    if (blk.ffn) {
      blk.ffn->w1.data() = src.w1.data();
      blk.ffn->b1.data() = src.b1.data();
      blk.ffn->w2.data() = src.w2.data();
      blk.ffn->b2.data() = src.b2.data();
    }
    if (blk.moe) {
      for (FFNParams& e : blk.moe->experts) {
        e.w1.data() = src.w1.data();
        e.b1.data() = src.b1.data();
        e.w2.data() = src.w2.data();
        e.b2.data() = src.b2.data();
      }
      if (blk.moe->shared) {
        blk.moe->shared->w1.data() = src.w1.data();
        blk.moe->shared->b1.data() = src.b1.data();
      }
    }
  }
  m.embed.proj_w.data() = dense.embed.proj_w.data();
  m.embed.proj_b.data() = dense.embed.proj_b.data();
  m.embed.cls.data() = dense.embed.cls.data();
  m.embed.pos.data() = dense.embed.pos.data();
  m.ln_f.gamma.data() = dense.ln_f.gamma.data();
  m.ln_f.beta.data() = dense.ln_f.beta.data();
  m.head.w.data() = dense.head.w.data();
  m.head.b.data() = dense.head.b.data();
  return m;
}

}  // namespace vimoe
