// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routing log: every gate decision made while evaluating or training a model,
// with enough metadata to rebuild heatmaps, load vectors, and allocation maps
// offline. Records are fixed width given the header constants.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "vimoe/io.hpp"
#include "vimoe/moe.hpp"

namespace vimoe {

struct RoutingRecord {
  std::int32_t layer_index = 0;  // internal block index, 0 = shallowest
  std::int64_t item_id = 0;
  std::int32_t token_index = -1;  // -1 in image mode; 0 is the [CLS] token
  std::int32_t label = -1;        // -1 when the routing unit has no class label
  std::vector<std::uint16_t> selected;  // k expert ids, probability-descending
  std::vector<double> probs;            // full router distribution, length N

  bool operator==(const RoutingRecord& o) const {
    return layer_index == o.layer_index && item_id == o.item_id && token_index == o.token_index &&
           label == o.label && selected == o.selected && probs == o.probs;
  }
};

struct RoutingLog {
  std::uint32_t num_experts = 0;
  std::uint32_t top_k = 1;
  RoutingMode routing_mode = RoutingMode::image;
  std::uint32_t depth = 0;  // backbone depth; converts block index to the
                            // reporting convention (1 = deepest)
  std::uint64_t model_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<RoutingRecord> records;

  bool operator==(const RoutingLog& o) const {
    return num_experts == o.num_experts && top_k == o.top_k && routing_mode == o.routing_mode &&
           depth == o.depth && model_hash == o.model_hash && dataset_hash == o.dataset_hash &&
           records == o.records;
  }

  // Ascending internal block indices present in the log.
  std::vector<std::int32_t> layers() const {
    std::vector<std::int32_t> out;
    for (const RoutingRecord& r : records)
      if (std::find(out.begin(), out.end(), r.layer_index) == out.end())
        out.push_back(r.layer_index);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::int32_t block_to_report_layer(std::int32_t block) const {
    return static_cast<std::int32_t>(depth) - block;
  }
  std::int32_t report_layer_to_block(std::int32_t report) const {
    return static_cast<std::int32_t>(depth) - report;
  }
};

namespace log_detail {
inline constexpr char kMagic[4] = {'V', 'I', 'M', 'R'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace log_detail

inline void save_routing_log(const RoutingLog& log, const std::string& path) {
  io::Writer w;
  w.magic(log_detail::kMagic);
  w.pod<std::uint32_t>(log_detail::kVersion);
  w.pod<std::uint32_t>(log.num_experts);
  w.pod<std::uint32_t>(log.top_k);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(log.routing_mode));
  w.pod<std::uint32_t>(log.depth);
  w.pod<std::uint64_t>(log.model_hash);
  w.pod<std::uint64_t>(log.dataset_hash);
  w.pod<std::uint64_t>(log.records.size());
  for (const RoutingRecord& r : log.records) {
    w.pod<std::int32_t>(r.layer_index);
    w.pod<std::int64_t>(r.item_id);
    w.pod<std::int32_t>(r.token_index);
    w.pod<std::int32_t>(r.label);
    w.pod_array(r.selected.data(), r.selected.size());
    w.pod_array(r.probs.data(), r.probs.size());
  }
  w.to_file(path);
}

inline RoutingLog load_routing_log(const std::string& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(log_detail::kMagic, "routing log");
  const auto version = r.pod<std::uint32_t>();
  if (version != log_detail::kVersion)
    throw format_error(path + ": unsupported routing log version " + std::to_string(version) +
                       " at byte 4");
  RoutingLog log;
  log.num_experts = r.pod<std::uint32_t>();
  log.top_k = r.pod<std::uint32_t>();
  log.routing_mode = static_cast<RoutingMode>(r.pod<std::uint8_t>());
  log.depth = r.pod<std::uint32_t>();
  log.model_hash = r.pod<std::uint64_t>();
  log.dataset_hash = r.pod<std::uint64_t>();
  const auto n = r.pod<std::uint64_t>();
  log.records.resize(n);
  for (auto& rec : log.records) {
    rec.layer_index = r.pod<std::int32_t>();
    rec.item_id = r.pod<std::int64_t>();
    rec.token_index = r.pod<std::int32_t>();
    rec.label = r.pod<std::int32_t>();
    rec.selected = r.pod_array<std::uint16_t>(log.top_k);
    rec.probs = r.pod_array<double>(log.num_experts);
  }
  if (r.remaining() != 0)
    throw format_error(path + ": trailing bytes at " + std::to_string(r.pos()));
  return log;
}

}  // namespace vimoe
