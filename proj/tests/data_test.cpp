// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "vimoe/checkpoint.hpp"
#include "vimoe/data.hpp"
#include "vimoe/routing_log.hpp"

namespace vimoe {
namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("vimoe_data_test_" + name)).string();
}

DataConfig lab_cfg() { return DataConfig{}; }

// Noise-free class templates, the matching targets.
std::vector<std::vector<double>> templates(std::size_t classes, std::uint64_t seed,
                                           std::size_t size) {
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < classes; ++c)
    out.push_back(data_detail::signature_image(seed, c, size));
  return out;
}

// Nearest class signature by correlation. Amplitude jitter scales every inner
// product equally, so plain dot products suffice.
int match_class(const std::vector<float>& img, const std::vector<std::vector<double>>& tmpl) {
  int best = 0;
  double best_dot = -1e300;
  for (std::size_t c = 0; c < tmpl.size(); ++c) {
    double dot = 0.0;
    for (std::size_t i = 0; i < tmpl[c].size(); ++i) dot += img[i] * tmpl[c][i];
    if (dot > best_dot) {
      best_dot = dot;
      best = static_cast<int>(c);
    }
  }
  return best;
}

TEST(ClusterClassification, NoiselessGivesOneDistinctImagePerClass) {
  DataConfig cfg = lab_cfg();
  cfg.noise_sigma = 0.0;
  cfg.amp_lo = cfg.amp_hi = 1.0;
  Dataset d = gen_cluster_classification(8, 8, 3, cfg);
  std::set<std::vector<float>> unique;
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(d.label(i), static_cast<int>(i));
    unique.insert(d.image(i));
  }
  EXPECT_EQ(unique.size(), 8u);
}

TEST(ClusterClassification, DeterministicAcrossCalls) {
  Dataset a = gen_cluster_classification(8, 64, 5, lab_cfg());
  Dataset b = gen_cluster_classification(8, 64, 5, lab_cfg());
  EXPECT_TRUE(a == b);
  Dataset c = gen_cluster_classification(8, 64, 6, lab_cfg());
  EXPECT_FALSE(a == c);
}

TEST(ClusterClassification, TemplateMatchingOracleLearnability) {
  // Establishes that the training target is attainable before any training
  // experiment runs: brute-force matching must reach 95% on sigma = 0.3.
  const std::size_t classes = 8, count = 512;
  Dataset d = gen_cluster_classification(classes, count, 11, lab_cfg(), Split::test);
  const auto tmpl = templates(classes, 11, lab_cfg().image_size);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < count; ++i)
    hits += match_class(d.image(i), tmpl) == d.label(i);
  EXPECT_GE(static_cast<double>(hits) / count, 0.95)
      << "oracle accuracy " << static_cast<double>(hits) / count;
}

TEST(ClusterClassification, SplitsAreDisjointEvenWithoutNoise) {
  DataConfig cfg = lab_cfg();
  cfg.noise_sigma = 0.0;
  Dataset train = gen_cluster_classification(4, 32, 9, cfg, Split::train);
  Dataset test = gen_cluster_classification(4, 32, 9, cfg, Split::test);
  std::set<std::vector<float>> train_imgs;
  for (std::size_t i = 0; i < train.count(); ++i) train_imgs.insert(train.image(i));
  for (std::size_t i = 0; i < test.count(); ++i)
    EXPECT_EQ(train_imgs.count(test.image(i)), 0u) << "duplicate at test item " << i;
}

TEST(RegionSegmentation, SingleRegionGivesConstantLabelMap) {
  DataConfig cfg = lab_cfg();
  cfg.min_regions = cfg.max_regions = 1;
  Dataset d = gen_region_segmentation(6, 4, 13, cfg);
  for (std::size_t i = 0; i < d.count(); ++i) {
    const auto map = d.label_map(i);
    for (std::uint16_t v : map) EXPECT_EQ(v, map[0]);
  }
}

TEST(RegionSegmentation, LabelsStayInsidePlantedClasses) {
  const std::size_t classes = 6;
  Dataset d = gen_region_segmentation(classes, 16, 17, lab_cfg());
  for (std::uint16_t v : d.labels) EXPECT_LT(v, classes);
}

TEST(RegionSegmentation, RegionsAreAxisAlignedRectangles) {
  // Every row of a label map must consist of at most two runs per distinct
  // split, which means each column crossing is a single boundary. Checking a
  // weaker but sharp property: the set of columns where a row changes class
  // is identical for all rows within a horizontal band.
  DataConfig cfg = lab_cfg();
  cfg.noise_sigma = 0.0;
  Dataset d = gen_region_segmentation(6, 8, 19, cfg);
  const std::size_t s = d.width;
  for (std::size_t i = 0; i < d.count(); ++i) {
    const auto map = d.label_map(i);
    std::set<std::size_t> change_cols;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 1; x < s; ++x)
        if (map[y * s + x] != map[y * s + x - 1]) change_cols.insert(x);
    std::set<std::size_t> change_rows;
    for (std::size_t x = 0; x < s; ++x)
      for (std::size_t y = 1; y < s; ++y)
        if (map[y * s + x] != map[(y - 1) * s + x]) change_rows.insert(y);
    EXPECT_LE(change_cols.size(), 1u) << "item " << i;
    EXPECT_LE(change_rows.size(), 1u) << "item " << i;
  }
}

TEST(RegionSegmentation, PerPixelTemplateOracleAccuracy) {
  const std::size_t classes = 6, count = 64;
  Dataset d = gen_region_segmentation(classes, count, 23, lab_cfg());
  const std::size_t s = d.width;
  const auto tmpl = templates(classes, 23, s);

  // Window matching: each pixel takes the class whose signature best explains
  // the 5x5 neighbourhood.
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto img = d.image(i);
    const auto map = d.label_map(i);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        int best = 0;
        double best_err = 1e300;
        for (std::size_t c = 0; c < classes; ++c) {
          double err = 0.0;
          for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
              const int yy = static_cast<int>(y) + dy, xx = static_cast<int>(x) + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<int>(s) || xx >= static_cast<int>(s))
                continue;
              const double diff = img[yy * s + xx] - tmpl[c][yy * s + xx];
              err += diff * diff;
            }
          if (err < best_err) {
            best_err = err;
            best = static_cast<int>(c);
          }
        }
        hits += best == map[y * s + x];
        ++total;
      }
  }
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(total), 0.90)
      << "pixel oracle accuracy " << static_cast<double>(hits) / static_cast<double>(total);
}

TEST(PatchMajority, ConstantMapStaysConstant) {
  std::vector<std::uint16_t> map(28 * 28, 3);
  const auto patches = patch_majority_label(map, 28, 28, 7);
  EXPECT_EQ(patches.size(), 16u);
  for (std::uint16_t v : patches) EXPECT_EQ(v, 3);
}

TEST(PatchMajority, ClearMode) {
  std::vector<std::uint16_t> map{0, 0, 1, 2};
  EXPECT_EQ(patch_majority_label(map, 2, 2, 2)[0], 0);
}

TEST(PatchMajority, TieGoesToSmallerClass) {
  std::vector<std::uint16_t> map{1, 1, 2, 2};
  EXPECT_EQ(patch_majority_label(map, 2, 2, 2)[0], 1);
}

TEST(PatchMajority, ExhaustiveTwoByTwoEnumeration) {
  // All 3^4 label assignments of a 2x2 patch against a direct mode
  // computation with the smallest-class tie rule.
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int e = 0; e < 3; ++e) {
          std::vector<std::uint16_t> map{static_cast<std::uint16_t>(a),
                                         static_cast<std::uint16_t>(b),
                                         static_cast<std::uint16_t>(c),
                                         static_cast<std::uint16_t>(e)};
          std::array<int, 3> counts{0, 0, 0};
          for (std::uint16_t v : map) counts[v] += 1;
          int want = 0;
          for (int cls = 1; cls < 3; ++cls)
            if (counts[cls] > counts[want]) want = cls;
          EXPECT_EQ(patch_majority_label(map, 2, 2, 2)[0], want)
              << a << "," << b << "," << c << "," << e;
        }
}

TEST(PatchMajority, NonDivisibleSizeIsContractError) {
  std::vector<std::uint16_t> map(30 * 30, 0);
  EXPECT_THROW(patch_majority_label(map, 30, 30, 7), contract_error);
}

TEST(PatchMajority, OutputClassesSubsetOfInput) {
  Dataset d = gen_region_segmentation(6, 8, 29, lab_cfg());
  for (std::size_t i = 0; i < d.count(); ++i) {
    const auto map = d.label_map(i);
    std::set<std::uint16_t> in_classes(map.begin(), map.end());
    for (std::uint16_t v : patch_majority_label(map, d.height, d.width, 7))
      EXPECT_EQ(in_classes.count(v), 1u);
  }
}

TEST(DatasetIo, EmptyDatasetRejectedAtSave) {
  Dataset d;
  d.num_classes = 2;
  EXPECT_THROW(save_dataset(d, temp_path("empty.vimd")), contract_error);
}

TEST(DatasetIo, RoundTripIsExact) {
  const std::string path = temp_path("roundtrip.vimd");
  for (Task task : {Task::classification, Task::segmentation}) {
    Dataset d = task == Task::classification
                    ? gen_cluster_classification(5, 12, 31, lab_cfg())
                    : gen_region_segmentation(5, 12, 31, lab_cfg());
    save_dataset(d, path);
    Dataset back = load_dataset(path);
    EXPECT_TRUE(back == d);
  }
  fs::remove(path);
}

TEST(DatasetIo, CorruptionIsDetected) {
  const std::string path = temp_path("corrupt.vimd");
  Dataset d = gen_cluster_classification(4, 8, 37, lab_cfg());
  save_dataset(d, path);

  std::vector<char> bytes;
  {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    bytes.resize(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  bytes[64] ^= 0x40;  // flip one payload bit
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_dataset(path), format_error);
  fs::remove(path);
}

TEST(DatasetIo, BadMagicNamesOffset) {
  const std::string path = temp_path("badmagic.vimd");
  std::ofstream(path, std::ios::binary) << "NOPEnope";
  try {
    load_dataset(path);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("byte 0"), std::string::npos);
  }
  fs::remove(path);
}

TEST(CheckpointIo, RoundTripIsBitExact) {
  const std::string path = temp_path("model.vimo");
  ModelConfig cfg = vit_tiny_lab();
  cfg.moe_last_l = 2;
  cfg.num_experts = 3;
  cfg.shared_expert = true;
  ViMoEModel m = build(cfg, 41);
  rng::Stream s(42);
  m.visit_params([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += 0.01 * s.normal();
  });
  save_model(m, path);

  ViMoEModel m2 = build(cfg, 43);
  load_model(m2, path);
  auto pa = m.named_params();
  auto pb = m2.named_params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.data(), pb[i].second.data()) << pa[i].first;
  }
  fs::remove(path);
}

TEST(CheckpointIo, BuildFromDenseCheckpointPreservesTheTrainedFunction) {
  const std::string path = temp_path("dense.vimo");
  ModelConfig dense_cfg = vit_tiny_lab();
  dense_cfg.num_classes = 4;
  ViMoEModel dense = build(dense_cfg, 51);
  rng::Stream s(52);
  dense.visit_params([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += 0.02 * s.normal();  // stands in for training
  });
  save_model(dense, path);

  ModelConfig cfg = dense_cfg;
  cfg.moe_last_l = 3;
  cfg.num_experts = 4;
  cfg.shared_expert = true;
  ViMoEModel m = build_from_dense_checkpoint(cfg, 51, path);

  for (int trial = 0; trial < 5; ++trial) {
    rng::Stream is(100 + trial);
    std::vector<float> img(cfg.in_channels * cfg.image_size * cfg.image_size);
    for (float& v : img) v = static_cast<float>(is.normal());
    Tape t1, t2;
    Tensor a = forward(t1, m, img).logits;
    Tensor b = forward(t2, dense, img).logits;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-10);
  }
  fs::remove(path);
}

TEST(CheckpointIo, ShapeMismatchIsFormatError) {
  const std::string path = temp_path("mismatch.vimo");
  ModelConfig cfg = vit_tiny_lab();
  ViMoEModel m = build(cfg, 1);
  save_model(m, path);
  ModelConfig other = cfg;
  other.embed_dim = 64;
  other.heads = 4;
  ViMoEModel m2 = build(other, 1);
  EXPECT_THROW(load_model(m2, path), format_error);
  fs::remove(path);
}

TEST(RoutingLogIo, RoundTripIsExact) {
  const std::string path = temp_path("log.vimr");
  RoutingLog log;
  log.num_experts = 4;
  log.top_k = 2;
  log.routing_mode = RoutingMode::token;
  log.depth = 6;
  log.model_hash = 0xDEADBEEF12345678ULL;
  log.dataset_hash = 42;
  rng::Stream s(51);
  for (int i = 0; i < 25; ++i) {
    RoutingRecord rec;
    rec.layer_index = static_cast<std::int32_t>(s.uniform_int(4, 5));
    rec.item_id = static_cast<std::int64_t>(s.uniform_int(0, 7));
    rec.token_index = static_cast<std::int32_t>(s.uniform_int(0, 16));
    rec.label = static_cast<std::int32_t>(s.uniform_int(0, 5)) - 1;
    rec.selected = {static_cast<std::uint16_t>(s.uniform_int(0, 3)),
                    static_cast<std::uint16_t>(s.uniform_int(0, 3))};
    std::vector<double> p(4);
    double z = 0;
    for (double& v : p) {
      v = s.uniform() + 1e-9;
      z += v;
    }
    for (double& v : p) v /= z;
    rec.probs = p;
    log.records.push_back(std::move(rec));
  }
  save_routing_log(log, path);
  RoutingLog back = load_routing_log(path);
  EXPECT_TRUE(back == log);
  fs::remove(path);
}

TEST(RoutingLogIo, LayerConversionFollowsDeepestFirstConvention) {
  RoutingLog log;
  log.depth = 12;
  EXPECT_EQ(log.block_to_report_layer(11), 1);   // deepest block is layer 1
  EXPECT_EQ(log.block_to_report_layer(0), 12);   // shallowest block is layer 12
  EXPECT_EQ(log.report_layer_to_block(1), 11);
  EXPECT_EQ(log.report_layer_to_block(12), 0);
}

}  // namespace
}  // namespace vimoe
