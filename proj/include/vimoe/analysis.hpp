// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing forensics over recorded logs: class-by-expert heatmaps with
// readability reordering, specialization scores, expert-load vectors,
// efficient-layer recommendation, expert allocation maps, and empirical
// routing-degree estimation. Reported layer numbers follow the deepest-first
// convention (layer 1 is the last block); block indices stay internal.

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vimoe/counting.hpp"
#include "vimoe/routing_log.hpp"

namespace vimoe {

struct Heatmap {
  std::int32_t block_index = 0;
  std::int32_t report_layer = 0;  // 1 = deepest
  std::size_t num_classes = 0;
  std::size_t num_experts = 0;
  std::vector<double> matrix;            // raw order, row-stochastic per nonzero row
  std::vector<std::uint64_t> row_counts; // routing units per class
  std::vector<std::size_t> row_perm;     // display position -> raw class
  std::vector<std::size_t> col_perm;     // display position -> raw expert

  double at(std::size_t cls, std::size_t expert) const {
    return matrix[cls * num_experts + expert];
  }
};

namespace analysis_detail {

inline void require_layer(const RoutingLog& log, std::int32_t block) {
  const auto layers = log.layers();
  if (std::find(layers.begin(), layers.end(), block) == layers.end())
    throw contract_error("block " + std::to_string(block) + " carries no routing records");
}

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace analysis_detail

// Class-by-expert top-1 assignment fractions for one MoE layer. Unlabelled
// units (label < 0, e.g. [CLS] tokens) are excluded. Display order sorts
// classes by their dominant expert and experts by total load.
inline Heatmap build_heatmap(const RoutingLog& log, std::int32_t block, std::size_t num_classes) {
  analysis_detail::require_layer(log, block);
  Heatmap h;
  h.block_index = block;
  h.report_layer = log.block_to_report_layer(block);
  h.num_classes = num_classes;
  h.num_experts = log.num_experts;
  h.matrix.assign(num_classes * log.num_experts, 0.0);
  h.row_counts.assign(num_classes, 0);

  std::vector<std::uint64_t> cell(num_classes * log.num_experts, 0);
  std::vector<std::uint64_t> col_totals(log.num_experts, 0);
  for (const RoutingRecord& r : log.records) {
    if (r.layer_index != block || r.label < 0) continue;
    if (static_cast<std::size_t>(r.label) >= num_classes)
      throw contract_error("label " + std::to_string(r.label) + " outside " +
                           std::to_string(num_classes) + " classes");
    const std::size_t e = r.selected[0];
    cell[static_cast<std::size_t>(r.label) * log.num_experts + e] += 1;
    col_totals[e] += 1;
    h.row_counts[static_cast<std::size_t>(r.label)] += 1;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (h.row_counts[c] == 0) continue;  // zero rows stay zero
    for (std::size_t e = 0; e < log.num_experts; ++e)
      h.matrix[c * log.num_experts + e] = static_cast<double>(cell[c * log.num_experts + e]) /
                                          static_cast<double>(h.row_counts[c]);
  }

  // Rows: populated classes first, grouped by dominant expert, stronger
  // specialization first. Columns: total load, descending.
  h.row_perm.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) h.row_perm[c] = c;
  auto row_key = [&](std::size_t c) {
    std::size_t arg = 0;
    double mx = 0.0;
    for (std::size_t e = 0; e < h.num_experts; ++e)
      if (h.at(c, e) > mx) {
        mx = h.at(c, e);
        arg = e;
      }
    return std::tuple<int, std::size_t, double, std::size_t>(h.row_counts[c] == 0 ? 1 : 0, arg,
                                                             -mx, c);
  };
  std::stable_sort(h.row_perm.begin(), h.row_perm.end(),
                   [&](std::size_t a, std::size_t b) { return row_key(a) < row_key(b); });

  h.col_perm.resize(log.num_experts);
  for (std::size_t e = 0; e < log.num_experts; ++e) h.col_perm[e] = e;
  std::stable_sort(h.col_perm.begin(), h.col_perm.end(), [&](std::size_t a, std::size_t b) {
    if (col_totals[a] != col_totals[b]) return col_totals[a] > col_totals[b];
    return a < b;
  });
  return h;
}

// Mean over populated classes of the dominant-expert margin above uniform,
// scaled into [0, 1]. 1 means every class sticks to one expert, 0 means
// routing carries no class information.
inline double specialization_score(const Heatmap& h) {
  if (h.num_experts < 2) throw contract_error("specialization undefined for a single expert");
  const double uniform = 1.0 / static_cast<double>(h.num_experts);
  double sum = 0.0;
  std::size_t rows = 0;
  for (std::size_t c = 0; c < h.num_classes; ++c) {
    if (h.row_counts[c] == 0) continue;
    double mx = 0.0;
    for (std::size_t e = 0; e < h.num_experts; ++e) mx = std::max(mx, h.at(c, e));
    sum += (mx - uniform) / (1.0 - uniform);
    rows += 1;
  }
  if (rows == 0) throw contract_error("specialization of an all-empty heatmap");
  return sum / static_cast<double>(rows);
}

// Fraction of routing units whose top-1 expert is e. Counts every unit,
// labelled or not; this is exactly the f vector of the balancing loss.
inline std::vector<double> expert_load(const RoutingLog& log, std::int32_t block) {
  analysis_detail::require_layer(log, block);
  std::vector<std::uint64_t> counts(log.num_experts, 0);
  std::uint64_t total = 0;
  for (const RoutingRecord& r : log.records) {
    if (r.layer_index != block) continue;
    counts[r.selected[0]] += 1;
    total += 1;
  }
  std::vector<double> load(log.num_experts);
  for (std::size_t e = 0; e < log.num_experts; ++e)
    load[e] = static_cast<double>(counts[e]) / static_cast<double>(total);
  return load;
}

struct LayerReport {
  std::int32_t block_index = 0;
  std::int32_t report_layer = 0;
  double specialization = 0.0;
  std::vector<double> load;
  bool keep = false;
};

struct Recommendation {
  std::vector<LayerReport> reports;  // deepest first
  std::size_t keep_count = 0;        // suffix of deep layers to retain
  std::uint64_t degree = 1;          // routing degree of the kept stack
  bool degree_below_guidance = false;
  std::size_t suggested_num_experts = 0;  // smallest N reaching the guidance band
};

// Per-layer specialization reports for every layer in the log, deepest first.
inline std::vector<LayerReport> layer_reports(const RoutingLog& log, std::size_t num_classes) {
  std::vector<std::int32_t> blocks = log.layers();
  std::sort(blocks.begin(), blocks.end(), std::greater<>());
  std::vector<LayerReport> out;
  for (std::int32_t b : blocks) {
    LayerReport r;
    r.block_index = b;
    r.report_layer = log.block_to_report_layer(b);
    r.specialization = specialization_score(build_heatmap(log, b, num_classes));
    r.load = expert_load(log, b);
    out.push_back(std::move(r));
  }
  return out;
}

// Keep the maximal run of deep layers whose specialization clears the
// threshold; everything shallower is a candidate for the dense structure.
// 32 to 64 distinct combinations is the working band; below it the expert
// count is flagged as too small.
inline Recommendation recommend_layers(std::vector<LayerReport> reports, std::size_t num_experts,
                                       std::size_t top_k, double tau = 0.5) {
  std::stable_sort(reports.begin(), reports.end(),
                   [](const LayerReport& a, const LayerReport& b) {
                     return a.report_layer < b.report_layer;  // deepest (1) first
                   });
  Recommendation rec;
  rec.reports = std::move(reports);
  for (LayerReport& r : rec.reports) {
    if (r.specialization >= tau && rec.keep_count == static_cast<std::size_t>(r.report_layer - 1)) {
      r.keep = true;
      rec.keep_count += 1;
    } else {
      r.keep = false;
    }
  }
  rec.degree = routing_degree(num_experts, top_k, rec.keep_count);
  rec.degree_below_guidance = rec.degree < 32;
  rec.suggested_num_experts = num_experts;
  if (rec.degree_below_guidance && rec.keep_count > 0) {
    std::size_t n = num_experts;
    while (n < 64 && routing_degree(n, top_k, rec.keep_count) < 32) ++n;
    rec.suggested_num_experts = n;
  }
  return rec;
}

// 16 visually distinct colors; expert e maps to palette[e].
inline const std::array<std::array<std::uint8_t, 3>, 16>& expert_palette() {
  static const std::array<std::array<std::uint8_t, 3>, 16> p{{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60},  {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40},  {255, 250, 200}, {128, 0, 0},    {128, 128, 128},
  }};
  return p;
}

// Patch-grid expert assignment of one image rendered as a binary PPM (P6),
// one pixel per patch. Token-mode logs only.
inline std::vector<char> allocation_map(const RoutingLog& log, std::int64_t image_id,
                                        std::int32_t block) {
  if (log.routing_mode != RoutingMode::token)
    throw contract_error("allocation maps need a token-mode routing log");
  analysis_detail::require_layer(log, block);
  if (log.num_experts > expert_palette().size())
    throw contract_error("palette covers at most 16 experts");

  std::map<std::int32_t, std::size_t> token_to_expert;
  for (const RoutingRecord& r : log.records) {
    if (r.layer_index != block || r.item_id != image_id) continue;
    if (r.token_index <= 0) continue;  // [CLS] has no spatial position
    token_to_expert[r.token_index - 1] = r.selected[0];
  }
  if (token_to_expert.empty())
    throw contract_error("no token records for item " + std::to_string(image_id));
  const std::size_t patches = token_to_expert.size();
  std::size_t grid = 1;
  while (grid * grid < patches) ++grid;
  if (grid * grid != patches)
    throw contract_error("token records of item " + std::to_string(image_id) +
                         " do not tile a square grid");

  std::string header = "P6\n" + std::to_string(grid) + " " + std::to_string(grid) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  for (std::size_t t = 0; t < patches; ++t) {
    const auto it = token_to_expert.find(static_cast<std::int32_t>(t));
    if (it == token_to_expert.end())
      throw contract_error("missing token " + std::to_string(t) + " for item " +
                           std::to_string(image_id));
    const auto& rgb = expert_palette()[it->second];
    out.push_back(static_cast<char>(rgb[0]));
    out.push_back(static_cast<char>(rgb[1]));
    out.push_back(static_cast<char>(rgb[2]));
  }
  return out;
}

// Number of distinct cross-layer expert combinations observed, image mode.
// Bounded above by routing_degree(N, k, L).
inline std::uint64_t empirical_degree(const RoutingLog& log) {
  if (log.routing_mode != RoutingMode::image)
    throw contract_error("empirical degree is defined over image-mode logs");
  std::map<std::int64_t, std::map<std::int32_t, std::vector<std::uint16_t>>> per_item;
  for (const RoutingRecord& r : log.records) {
    std::vector<std::uint16_t> sel(r.selected);
    std::sort(sel.begin(), sel.end());
    per_item[r.item_id][r.layer_index] = std::move(sel);
  }
  std::set<std::string> tuples;
  for (const auto& [item, layers] : per_item) {
    std::string key;
    for (const auto& [layer, sel] : layers) {
      key += std::to_string(layer) + ":";
      for (std::uint16_t e : sel) key += std::to_string(e) + ",";
      key += ";";
    }
    tuples.insert(std::move(key));
  }
  return tuples.size();
}

// CSV with the display permutations in the header, so the rendered figure is
// reproducible from the file alone. Rows appear in display order; the first
// two columns carry the raw class id and its sample count.
inline std::string heatmap_csv(const Heatmap& h) {
  std::string s;
  s += "layer," + std::to_string(h.report_layer) + "\n";
  s += "block," + std::to_string(h.block_index) + "\n";
  s += "classes," + std::to_string(h.num_classes) + "\n";
  s += "experts," + std::to_string(h.num_experts) + "\n";
  s += "row_perm";
  for (std::size_t c : h.row_perm) s += "," + std::to_string(c);
  s += "\ncol_perm";
  for (std::size_t e : h.col_perm) s += "," + std::to_string(e);
  s += "\nclass,count";
  for (std::size_t e : h.col_perm) s += ",e" + std::to_string(e);
  s += "\n";
  for (std::size_t row = 0; row < h.num_classes; ++row) {
    const std::size_t c = h.row_perm[row];
    s += std::to_string(c) + "," + std::to_string(h.row_counts[c]);
    for (std::size_t e : h.col_perm) s += "," + analysis_detail::format_double(h.at(c, e));
    s += "\n";
  }
  return s;
}

inline std::string load_csv(const std::vector<double>& load) {
  std::string s = "expert,load\n";
  for (std::size_t e = 0; e < load.size(); ++e)
    s += std::to_string(e) + "," + analysis_detail::format_double(load[e]) + "\n";
  return s;
}

inline std::string recommendation_csv(const Recommendation& rec) {
  std::string s = "layer,block,specialization,keep\n";
  for (const LayerReport& r : rec.reports) {
    s += std::to_string(r.report_layer) + "," + std::to_string(r.block_index) + "," +
         analysis_detail::format_double(r.specialization) + "," + (r.keep ? "1" : "0") + "\n";
  }
  s += "keep_count," + std::to_string(rec.keep_count) + ",,\n";
  s += "degree," + std::to_string(rec.degree) + ",,\n";
  return s;
}

}  // namespace vimoe
