// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse mixture-of-experts layer: linear gate with softmax routing, top-k
// expert selection, optional always-active shared expert, and the
// load-balancing auxiliary loss.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "vimoe/ops.hpp"
#include "vimoe/tensor.hpp"
#include "vimoe/vit.hpp"

namespace vimoe {

enum class RoutingMode : std::uint8_t { image = 0, token = 1 };
enum class RenormMode : std::uint8_t { none = 0, topk = 1 };

struct MoELayerParams {
  Tensor gate_w;                    // [N x D], no bias
  std::vector<FFNParams> experts;   // N routed experts, FFN-shaped
  std::optional<FFNParams> shared;  // always-active expert, coefficient 1
  std::size_t top_k = 1;
  RenormMode renorm = RenormMode::topk;

  std::size_t num_experts() const { return experts.size(); }
};

// One routing decision for one routing unit (an image or a token).
struct GateDecision {
  std::vector<double> probs;         // full softmax output, length N
  std::vector<std::size_t> selected; // k expert indices, probability-descending
  std::vector<double> weights;       // mixing weights actually applied, length k
};

// Top-k indices by probability, equal probabilities resolved toward the
// smaller expert index.
inline std::vector<std::size_t> topk_indices(const std::vector<double>& probs, std::size_t k) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  order.resize(k);
  return order;
}

struct GateResult {
  GateDecision decision;
  Tensor probs;    // [N], on tape
  Tensor weights;  // [k], on tape
};

// g(x) = softmax(gate_w * x) followed by top-k selection. x is one routing
// unit's gating input, a length-D row.
inline GateResult gate(Tape& tape, const Tensor& x_row, const MoELayerParams& layer) {
  const std::size_t n = layer.num_experts();
  const std::size_t k = layer.top_k;
  if (n == 0) throw contract_error("gate: layer has no experts");
  if (k == 0 || k > n) throw contract_error("gate: top_k out of range");

  Tensor row = x_row.rank() == 1 ? reshape(tape, x_row, {1, x_row.dim(0)}) : x_row;
  Tensor logits = matmul(tape, row, transpose(tape, layer.gate_w));  // [1 x N]
  Tensor probs = reshape(tape, softmax(tape, logits), {n});

  GateResult r;
  r.decision.probs = probs.data();
  r.decision.selected = topk_indices(r.decision.probs, k);
  r.probs = probs;

  Tensor sel = gather(tape, probs, r.decision.selected);
  r.weights = layer.renorm == RenormMode::topk ? div_bcast(tape, sel, sum(tape, sel)) : sel;
  r.decision.weights = r.weights.data();
  return r;
}

// Gating inputs for a block's hidden state: the [CLS] row in image mode, all
// T rows in token mode.
inline std::vector<std::size_t> route_input_rows(std::size_t token_count, RoutingMode mode) {
  if (mode == RoutingMode::image) return {0};
  std::vector<std::size_t> rows(token_count);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Output of one MoE layer for the tokens of a single item. gating decisions
// are returned for logging and for the auxiliary loss; the caller adds the
// residual connection.
struct MoEForwardResult {
  Tensor output;                      // [T x D]
  std::vector<GateDecision> decisions;  // one per routing unit
  std::vector<Tensor> prob_tensors;     // matching [N] tensors, for the aux loss
};

inline MoEForwardResult moe_forward(Tape& tape, const Tensor& x_tokens, RoutingMode mode,
                                    const MoELayerParams& layer) {
  const std::size_t t = x_tokens.dim(0);
  MoEForwardResult res;

  if (mode == RoutingMode::image) {
    Tensor cls = slice_rows(tape, x_tokens, 0, 1);
    GateResult g = gate(tape, cls, layer);
    Tensor acc;
    for (std::size_t j = 0; j < g.decision.selected.size(); ++j) {
      Tensor w_j = gather(tape, g.weights, {j});
      Tensor e_out = ffn_forward(tape, x_tokens, layer.experts[g.decision.selected[j]]);
      Tensor term = mul_bcast(tape, e_out, w_j);
      acc = acc.defined() ? add(tape, acc, term) : term;
    }
    res.output = acc;
    res.decisions.push_back(std::move(g.decision));
    res.prob_tensors.push_back(g.probs);
  } else {
    std::vector<GateResult> gates;
    gates.reserve(t);
    for (std::size_t row = 0; row < t; ++row) {
      gates.push_back(gate(tape, slice_rows(tape, x_tokens, row, row + 1), layer));
    }
    // Union of selected experts, ascending, then one dense pass per expert
    // scaled by that expert's per-token weight vector.
    std::vector<bool> used(layer.num_experts(), false);
    for (const GateResult& g : gates)
      for (std::size_t e : g.decision.selected) used[e] = true;

    Tensor zero_w = Tensor::zeros({1});
    Tensor acc;
    for (std::size_t e = 0; e < layer.num_experts(); ++e) {
      if (!used[e]) continue;
      std::vector<Tensor> parts;
      parts.reserve(t);
      for (std::size_t row = 0; row < t; ++row) {
        const auto& sel = gates[row].decision.selected;
        auto it = std::find(sel.begin(), sel.end(), e);
        parts.push_back(it == sel.end()
                            ? zero_w
                            : gather(tape, gates[row].weights,
                                     {static_cast<std::size_t>(it - sel.begin())}));
      }
      Tensor wvec = concat(tape, parts, 0);  // [T]
      Tensor e_out = ffn_forward(tape, x_tokens, layer.experts[e]);
      Tensor term = rowwise_scale(tape, e_out, wvec);
      acc = acc.defined() ? add(tape, acc, term) : term;
    }
    res.output = acc;
    for (GateResult& g : gates) {
      res.decisions.push_back(std::move(g.decision));
      res.prob_tensors.push_back(g.probs);
    }
  }

  if (layer.shared) {
    Tensor s_out = ffn_forward(tape, x_tokens, *layer.shared);
    res.output = res.output.defined() ? add(tape, res.output, s_out) : s_out;
  }
  return res;
}

// Running per-layer balance statistics. counts are hard argmax assignments,
// prob_sums accumulate the full router distribution; both grow by one routing
// unit at a time in item order.
struct AuxLossAccumulator {
  std::vector<std::uint64_t> counts;
  std::vector<double> prob_sums;
  std::uint64_t total_units = 0;
  double alpha = 0.01;

  explicit AuxLossAccumulator(std::size_t n = 0, double a = 0.01)
      : counts(n, 0), prob_sums(n, 0.0), alpha(a) {}

  void add(const GateDecision& d) {
    counts[d.selected[0]] += 1;  // selected is probability-descending, [0] is the argmax
    for (std::size_t i = 0; i < prob_sums.size(); ++i) prob_sums[i] += d.probs[i];
    total_units += 1;
  }

  void merge(const AuxLossAccumulator& other) {
    for (std::size_t i = 0; i < counts.size(); ++i) {
      counts[i] += other.counts[i];
      prob_sums[i] += other.prob_sums[i];
    }
    total_units += other.total_units;
  }

  std::vector<double> f() const {
    if (total_units == 0) throw contract_error("load fractions of an empty accumulator");
    std::vector<double> out(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
      out[i] = static_cast<double>(counts[i]) / static_cast<double>(total_units);
    return out;
  }

  std::vector<double> p() const {
    if (total_units == 0) throw contract_error("router fractions of an empty accumulator");
    std::vector<double> out(prob_sums.size());
    for (std::size_t i = 0; i < prob_sums.size(); ++i)
      out[i] = prob_sums[i] / static_cast<double>(total_units);
    return out;
  }

  // alpha * N * sum_i f_i * P_i
  double loss() const {
    const auto fs = f();
    const auto ps = p();
    double dot = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i) dot += fs[i] * ps[i];
    return alpha * static_cast<double>(fs.size()) * dot;
  }
};

// Differentiable form of the balancing loss. f is frozen (argmax counts carry
// no gradient); the gradient flows only through the summed router
// probabilities.
inline Tensor load_balance_loss(Tape& tape, const std::vector<std::uint64_t>& counts,
                                const Tensor& prob_sums, std::uint64_t total_units, double alpha) {
  const std::size_t n = counts.size();
  if (total_units == 0) throw contract_error("load_balance_loss over zero routing units");
  if (prob_sums.size() != n) throw shape_error("load_balance_loss: count/probability length mismatch");
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i)
    f[i] = static_cast<double>(counts[i]) / static_cast<double>(total_units);
  Tensor f_const = Tensor::from({n}, std::move(f));
  Tensor p = scale(tape, prob_sums, 1.0 / static_cast<double>(total_units));
  Tensor dot = sum(tape, mul(tape, f_const, p));
  return scale(tape, dot, alpha * static_cast<double>(n));
}

inline Tensor load_balance_loss(Tape& tape, const AuxLossAccumulator& acc) {
  Tensor sums = Tensor::from({acc.prob_sums.size()}, acc.prob_sums);
  return load_balance_loss(tape, acc.counts, sums, acc.total_units, acc.alpha);
}

}  // namespace vimoe
