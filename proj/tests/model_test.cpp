// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vimoe/counting.hpp"
#include "vimoe/model.hpp"

namespace vimoe {
namespace {

std::vector<float> random_image(const ModelConfig& cfg, std::uint64_t key) {
  rng::Stream s(key);
  std::vector<float> img(cfg.in_channels * cfg.image_size * cfg.image_size);
  for (float& v : img) v = static_cast<float>(s.normal());
  return img;
}

TEST(Build, DenseBaselineHasNoGates) {
  ModelConfig cfg = vit_tiny_lab();
  cfg.moe_last_l = 0;
  ViMoEModel m = build(cfg, 1);
  for (const auto& blk : m.blocks) {
    EXPECT_TRUE(blk.ffn.has_value());
    EXPECT_FALSE(blk.moe.has_value());
  }
  CountReport r = count_params(cfg);
  EXPECT_EQ(r.total_params, r.activated_params);
}

TEST(Build, FullDepthMoe) {
  ModelConfig cfg = vit_tiny_lab();
  cfg.moe_last_l = cfg.depth;
  cfg.num_experts = 2;
  ViMoEModel m = build(cfg, 1);
  for (const auto& blk : m.blocks) EXPECT_TRUE(blk.moe.has_value());
  EXPECT_EQ(m.moe_blocks().size(), cfg.depth);
}

TEST(Build, OverDepthPlacementIsConfigError) {
  ModelConfig cfg = vit_tiny_lab();
  cfg.moe_last_l = cfg.depth + 1;
  EXPECT_THROW(build(cfg, 1), contract_error);
}

TEST(Build, ExpertsReplicateTheBlockFfn) {
  ModelConfig cfg = vit_tiny_lab();
  cfg.moe_last_l = 2;
  cfg.num_experts = 3;
  cfg.shared_expert = true;
  ViMoEModel moe_model = build(cfg, 42);

  ModelConfig dense_cfg = cfg;
  dense_cfg.moe_last_l = 0;
  dense_cfg.shared_expert = false;
  ViMoEModel dense = build(dense_cfg, 42);

  for (std::size_t b : moe_model.moe_blocks()) {
    const auto& moe = *moe_model.blocks[b].moe;
    const auto& base = *dense.blocks[b].ffn;
    for (const FFNParams& e : moe.experts) {
      EXPECT_EQ(e.w1.data(), base.w1.data());
      EXPECT_EQ(e.w2.data(), base.w2.data());
      EXPECT_EQ(e.b1.data(), base.b1.data());
      EXPECT_EQ(e.b2.data(), base.b2.data());
    }
    for (double v : moe.gate_w.data()) EXPECT_EQ(v, 0.0);
    ASSERT_TRUE(moe.shared.has_value());
    EXPECT_EQ(moe.shared->w1.data(), base.w1.data());
    for (double v : moe.shared->w2.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Build, ReplicationIdentityMatchesDenseForward) {
  // With renormalized top-k weights and a zero gate, the freshly built MoE
  // model computes the same function as the dense baseline.
  for (bool shared : {false, true}) {
    for (std::size_t n : {2u, 5u}) {
      ModelConfig cfg = vit_tiny_lab();
      cfg.moe_last_l = 3;
      cfg.num_experts = n;
      cfg.top_k = std::min<std::size_t>(2, n);
      cfg.shared_expert = shared;
      cfg.renorm_mode = RenormMode::topk;
      ViMoEModel moe_model = build(cfg, 77);

      ModelConfig dense_cfg = cfg;
      dense_cfg.moe_last_l = 0;
      dense_cfg.shared_expert = false;
      ViMoEModel dense = build(dense_cfg, 77);

      for (int trial = 0; trial < 10; ++trial) {
        const auto img = random_image(cfg, 1000 + trial);
        Tape t1, t2;
        Tensor a = forward(t1, moe_model, img).logits;
        Tensor b = forward(t2, dense, img).logits;
        for (std::size_t i = 0; i < a.size(); ++i)
          EXPECT_NEAR(a.at(i), b.at(i), 1e-10) << "shared=" << shared << " n=" << n;
      }
    }
  }
}

TEST(CountParams, TinyFormulaMatchesBruteForceEnumeration) {
  for (std::size_t l : {0u, 1u, 3u, 6u}) {
    for (bool shared : {false, true}) {
      ModelConfig cfg = vit_tiny_lab();
      cfg.moe_last_l = l;
      cfg.num_experts = 3;
      cfg.shared_expert = shared;
      ViMoEModel m = build(cfg, 5);
      std::uint64_t enumerated = 0;
      m.visit_params([&](const std::string&, Tensor& t) { enumerated += t.size(); });
      EXPECT_EQ(count_params(cfg).total_params, enumerated) << "L=" << l << " shared=" << shared;
    }
  }
}

TEST(CountParams, ActivatedNeverExceedsTotal) {
  ModelConfig cfg = vit_s_14();
  for (std::size_t l : {0u, 2u, 12u}) {
    cfg.moe_last_l = l;
    cfg.num_experts = 8;
    cfg.shared_expert = true;
    CountReport r = count_params(cfg);
    EXPECT_LE(r.activated_params, r.total_params);
    if (l == 0) EXPECT_EQ(r.activated_params, r.total_params);
  }
  // Equality also holds when every expert is activated (k = N).
  cfg.moe_last_l = 3;
  cfg.top_k = cfg.num_experts;
  CountReport all_active = count_params(cfg);
  EXPECT_EQ(all_active.activated_params, all_active.total_params);
}

TEST(CountParams, GrowsAffinelyInL) {
  ModelConfig cfg = vit_s_14();
  cfg.num_experts = 4;
  cfg.shared_expert = true;
  std::vector<std::uint64_t> totals;
  for (std::size_t l = 0; l <= 4; ++l) {
    cfg.moe_last_l = l;
    totals.push_back(count_params(cfg).total_params);
  }
  const std::uint64_t slope = totals[1] - totals[0];
  for (std::size_t l = 1; l < totals.size(); ++l)
    EXPECT_EQ(totals[l] - totals[l - 1], slope);
  // slope = (N - 1 + shared) * ffn + gate
  const std::uint64_t ffn = 2 * (384ull * 1536) + 1536 + 384;
  const std::uint64_t gate = 4ull * 384;
  EXPECT_EQ(slope, 4ull * ffn + gate);
}

struct TableRow {
  std::size_t n, l;
  bool shared;
  double total_m, activated_m;
};

TEST(CountParams, ReproducesReferenceTable) {
  ModelConfig base = vit_s_14();
  const std::vector<TableRow> rows{
      {8, 0, false, 22.0, 22.0},  {2, 5, false, 27.9, 22.0}, {2, 5, true, 33.8, 27.9},
      {4, 3, true, 36.2, 25.6},   {8, 2, true, 40.9, 24.4},  {8, 12, true, 135.5, 36.2},
  };
  for (const TableRow& row : rows) {
    ModelConfig cfg = base;
    cfg.moe_last_l = row.l;
    cfg.num_experts = row.n;
    cfg.shared_expert = row.shared;
    CountReport r = count_params(cfg);
    EXPECT_DOUBLE_EQ(r.total_millions(), row.total_m)
        << "N=" << row.n << " L=" << row.l << " shared=" << row.shared;
    EXPECT_DOUBLE_EQ(r.activated_millions(), row.activated_m)
        << "N=" << row.n << " L=" << row.l << " shared=" << row.shared;
  }
  // The exact dense count, for the record.
  EXPECT_EQ(count_params(base).total_params, 22'004'584u);
  EXPECT_EQ(count_params(base, /*include_head=*/false).total_params, 22'004'584u - 385'000u);
}

TEST(CountFlops, ReproducesReferenceTableWithinThreePercent) {
  ModelConfig base = vit_s_14();
  auto check = [&](std::size_t n, std::size_t l, bool shared, double want_g) {
    ModelConfig cfg = base;
    cfg.moe_last_l = l;
    cfg.num_experts = n;
    cfg.shared_expert = shared;
    const double got = static_cast<double>(count_flops(cfg, 224).flops);
    EXPECT_NEAR(got, want_g * 1e9, want_g * 1e9 * 0.03)
        << "N=" << n << " L=" << l << " shared=" << shared;
  };
  check(8, 0, false, 6.14);
  check(8, 2, true, 6.74);
  check(8, 12, true, 9.77);
  check(2, 5, true, 7.65);
  check(4, 3, true, 7.05);
}

TEST(CountFlops, DoublingTopKDoublesExpertFlopsExactly) {
  ModelConfig cfg = vit_s_14();
  cfg.moe_last_l = 2;
  cfg.num_experts = 8;
  cfg.top_k = 1;
  ModelConfig cfg2 = cfg;
  cfg2.top_k = 2;
  ModelConfig dense = cfg;
  dense.moe_last_l = 0;

  const std::uint64_t f1 = count_flops(cfg, 224).flops;
  const std::uint64_t f2 = count_flops(cfg2, 224).flops;
  const std::uint64_t fd = count_flops(dense, 224).flops;
  // Expert MACs within the MoE layers scale exactly with k; everything else
  // (backbone, gates) is unchanged.
  const std::uint64_t ffn_macs = 2ull * 257 * 384 * 1536;
  EXPECT_EQ(f2 - f1, cfg.moe_last_l * ffn_macs);
  EXPECT_EQ(f1 - fd, cfg.moe_last_l * (8ull * 384));  // top-1 experts match dense; gates remain
}

TEST(RoutingDegree, ReferenceValuesAndEdgeCases) {
  EXPECT_EQ(routing_degree(2, 1, 5), 32u);
  EXPECT_EQ(routing_degree(4, 1, 3), 64u);
  EXPECT_EQ(routing_degree(8, 1, 2), 64u);
  EXPECT_EQ(routing_degree(7, 1, 0), 1u);  // empty product
  EXPECT_EQ(routing_degree(9, 2, 1), 36u);
  EXPECT_THROW(routing_degree(4, 0, 1), contract_error);
  EXPECT_THROW(routing_degree(4, 5, 1), contract_error);
}

TEST(RoutingDegree, MultiplicativeAcrossLayers) {
  rng::Stream s(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + s.uniform_int(0, 6);
    const std::size_t k = 1 + s.uniform_int(0, n - 1);
    const std::size_t l1 = s.uniform_int(0, 3), l2 = s.uniform_int(0, 3);
    EXPECT_EQ(routing_degree(n, k, l1 + l2), routing_degree(n, k, l1) * routing_degree(n, k, l2));
  }
}

TEST(RoutingDegree, SaturatesInsteadOfWrapping) {
  EXPECT_EQ(routing_degree(8, 4, 12), ~std::uint64_t{0});  // 70^12 overflows u64
}

TEST(ConfigHash, DistinguishesConfigs) {
  ModelConfig a = vit_tiny_lab();
  ModelConfig b = vit_tiny_lab();
  b.moe_last_l = 1;
  b.num_experts = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(vit_tiny_lab()));
}

TEST(CountReport, CsvRowShape) {
  ModelConfig cfg = vit_s_14();
  cfg.moe_last_l = 2;
  cfg.num_experts = 8;
  cfg.shared_expert = true;
  CountReport r = count_flops(cfg, 224);
  const std::string row = count_report_csv_row(cfg, r);
  // hash,N,L,shared,k,total,activated,flops
  std::size_t commas = 0;
  for (char c : row) commas += (c == ',');
  EXPECT_EQ(commas, 7u);
  EXPECT_NE(row.find(",8,2,1,1,"), std::string::npos);
}

}  // namespace
}  // namespace vimoe
