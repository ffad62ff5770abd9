// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vision Transformer building blocks: patch embedding, pre-norm multi-head
// self-attention, the dense FFN, and the linear heads. Blocks are assembled
// into full models by model.hpp.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vimoe/ops.hpp"
#include "vimoe/tensor.hpp"

namespace vimoe {

struct PatchEmbedConfig {
  std::size_t image_size = 28;
  std::size_t patch_size = 7;
  std::size_t in_channels = 1;
  std::size_t embed_dim = 32;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  // One [CLS] token prepended at index 0.
  std::size_t token_count() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }

  void validate() const {
    if (patch_size == 0 || image_size % patch_size != 0)
      throw contract_error("image size " + std::to_string(image_size) +
                           " not divisible by patch size " + std::to_string(patch_size));
  }
};

struct PatchEmbedParams {
  Tensor proj_w;  // [patch_dim x D]
  Tensor proj_b;  // [D]
  Tensor cls;     // [1 x D]
  Tensor pos;     // [T x D]
};

struct FFNParams {
  Tensor w1;  // [D x hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [hidden x D]
  Tensor b2;  // [D]
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct AttentionParams {
  Tensor wqkv;  // [D x 3D]
  Tensor bqkv;  // [3D]
  Tensor wproj;  // [D x D]
  Tensor bproj;  // [D]
  std::size_t heads = 1;
};

// Flattens non-overlapping patches of a [C x H x W] image buffer into the
// constant [P x C*p*p] matrix fed to the projection. Row-major over the patch
// grid; within a row, channel-major then pixel-major.
inline Tensor patch_matrix(const std::vector<float>& image, const PatchEmbedConfig& cfg) {
  cfg.validate();
  const std::size_t s = cfg.image_size, p = cfg.patch_size, g = cfg.grid(), c = cfg.in_channels;
  if (image.size() != c * s * s)
    throw shape_error("image buffer has " + std::to_string(image.size()) + " values, expected " +
                      std::to_string(c * s * s));
  std::vector<double> out(cfg.num_patches() * cfg.patch_dim());
  std::size_t row = 0;
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx, ++row) {
      double* dst = out.data() + row * cfg.patch_dim();
      std::size_t o = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px, ++o)
            dst[o] = image[ch * s * s + (gy * p + py) * s + (gx * p + px)];
    }
  return Tensor::from({cfg.num_patches(), cfg.patch_dim()}, std::move(out));
}

// Patches projected and positioned, [CLS] prepended at row 0.
inline Tensor patch_embed(Tape& tape, const std::vector<float>& image, const PatchEmbedConfig& cfg,
                          const PatchEmbedParams& pe) {
  Tensor patches = patch_matrix(image, cfg);
  Tensor tok = add_rowvec(tape, matmul(tape, patches, pe.proj_w), pe.proj_b);
  Tensor tokens = concat(tape, {pe.cls, tok}, 0);
  return add(tape, tokens, pe.pos);
}

// Per-token FFN: w2 * gelu(w1 * x + b1) + b2. The caller applies the norm and
// the residual connection.
inline Tensor ffn_forward(Tape& tape, const Tensor& x, const FFNParams& ffn) {
  Tensor h = gelu(tape, add_rowvec(tape, matmul(tape, x, ffn.w1), ffn.b1));
  return add_rowvec(tape, matmul(tape, h, ffn.w2), ffn.b2);
}

// Pre-norm residual attention: x + proj(mhsa(ln(x))). When attn_probs is
// given, the per-head [T x T] attention matrices are appended to it.
inline Tensor attention(Tape& tape, const Tensor& x, const LayerNormParams& ln,
                        const AttentionParams& at, std::vector<Tensor>* attn_probs = nullptr) {
  const std::size_t d = x.dim(1), heads = at.heads;
  if (d % heads != 0)
    throw contract_error("embed dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor h = layernorm(tape, x, ln.gamma, ln.beta);
  Tensor qkv = add_rowvec(tape, matmul(tape, h, at.wqkv), at.bqkv);
  Tensor q = slice_cols(tape, qkv, 0, d);
  Tensor k = slice_cols(tape, qkv, d, 2 * d);
  Tensor v = slice_cols(tape, qkv, 2 * d, 3 * d);

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t hh = 0; hh < heads; ++hh) {
    Tensor qh = slice_cols(tape, q, hh * hd, (hh + 1) * hd);
    Tensor kh = slice_cols(tape, k, hh * hd, (hh + 1) * hd);
    Tensor vh = slice_cols(tape, v, hh * hd, (hh + 1) * hd);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    Tensor attn = softmax(tape, scores);
    if (attn_probs) attn_probs->push_back(attn);
    head_outs.push_back(matmul(tape, attn, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat(tape, head_outs, 1);
  Tensor out = add_rowvec(tape, matmul(tape, merged, at.wproj), at.bproj);
  return add(tape, x, out);
}

struct HeadParams {
  Tensor w;  // [D x num_classes]
  Tensor b;  // [num_classes]
};

// Single linear projection of the [CLS] token, [1 x num_classes].
inline Tensor classify_head(Tape& tape, const Tensor& cls_token, const HeadParams& head) {
  Tensor row = cls_token.rank() == 1 ? reshape(tape, cls_token, {1, cls_token.dim(0)}) : cls_token;
  return add_rowvec(tape, matmul(tape, row, head.w), head.b);
}

// Per-token linear logits for the patch tokens, [T-1 x num_classes].
inline Tensor seg_head(Tape& tape, const Tensor& patch_tokens, const HeadParams& head) {
  return add_rowvec(tape, matmul(tape, patch_tokens, head.w), head.b);
}

}  // namespace vimoe
