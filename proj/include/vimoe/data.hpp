// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic datasets. Every class owns a planted sinusoidal
// grating signature; classification items are one signature plus per-item
// amplitude jitter and pixel noise, segmentation items tile 1 to 4 axis
// aligned rectangles with different class textures. All randomness is
// counter-based and keyed by (seed, split, item, field), so generation is
// order independent and train/test streams never overlap.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vimoe/errors.hpp"
#include "vimoe/io.hpp"
#include "vimoe/model.hpp"
#include "vimoe/rng.hpp"

namespace vimoe {

enum class Split : std::uint8_t { train = 0, test = 1 };

struct DataConfig {
  std::size_t image_size = 28;
  std::size_t in_channels = 1;
  double noise_sigma = 0.3;
  double amp_lo = 0.7;  // per-item amplitude jitter range
  double amp_hi = 1.3;
  std::size_t min_regions = 2;  // segmentation only
  std::size_t max_regions = 4;
  std::size_t min_region_extent = 8;  // pixels
};

struct Dataset {
  Task task = Task::classification;
  Split split = Split::train;
  std::size_t num_classes = 0;
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<float> images;           // M * C * H * W
  std::vector<std::uint16_t> labels;   // M (classification) or M * H * W (segmentation)

  std::size_t count() const {
    const std::size_t per = channels * height * width;
    return per == 0 ? 0 : images.size() / per;
  }
  std::size_t pixels_per_image() const { return channels * height * width; }

  std::vector<float> image(std::size_t i) const {
    const std::size_t per = pixels_per_image();
    return {images.begin() + i * per, images.begin() + (i + 1) * per};
  }
  int label(std::size_t i) const { return static_cast<int>(labels[i]); }
  std::vector<std::uint16_t> label_map(std::size_t i) const {
    const std::size_t per = height * width;
    return {labels.begin() + i * per, labels.begin() + (i + 1) * per};
  }

  bool operator==(const Dataset& o) const {
    return task == o.task && split == o.split && num_classes == o.num_classes &&
           channels == o.channels && height == o.height && width == o.width &&
           images == o.images && labels == o.labels;
  }
};

namespace data_detail {

struct Signature {
  double fx, fy, phase;
};

// Per-class grating parameters. Shared across splits so held-out items test
// the same concepts.
inline Signature class_signature(std::uint64_t seed, std::size_t cls) {
  const std::uint64_t key = rng::combine(rng::combine(seed, 0x5167u), cls);
  Signature s;
  s.fx = 0.5 + 3.0 * rng::uniform01(rng::combine(key, 1));
  s.fy = 0.5 + 3.0 * rng::uniform01(rng::combine(key, 2));
  s.phase = 6.283185307179586 * rng::uniform01(rng::combine(key, 3));
  return s;
}

inline double signature_value(const Signature& s, std::size_t size, std::size_t y, std::size_t x) {
  const double u = static_cast<double>(x) / static_cast<double>(size);
  const double v = static_cast<double>(y) / static_cast<double>(size);
  return std::sin(6.283185307179586 * (s.fx * u + s.fy * v) + s.phase);
}

// Noise-free class template over the full image.
inline std::vector<double> signature_image(std::uint64_t seed, std::size_t cls, std::size_t size) {
  const Signature s = class_signature(seed, cls);
  std::vector<double> img(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) img[y * size + x] = signature_value(s, size, y, x);
  return img;
}

inline std::uint64_t item_key(std::uint64_t seed, Split split, std::size_t item,
                              std::uint64_t field) {
  return rng::combine(rng::combine(rng::combine(seed, 0x100 + static_cast<std::uint64_t>(split)),
                                   item),
                      field);
}

}  // namespace data_detail

// Balanced classification set: item i carries class i mod C.
inline Dataset gen_cluster_classification(std::size_t num_classes, std::size_t count,
                                          std::uint64_t seed, const DataConfig& cfg,
                                          Split split = Split::train) {
  if (num_classes < 2) throw contract_error("classification needs at least 2 classes");
  if (count < 1) throw contract_error("dataset must contain at least one item");
  const std::size_t s = cfg.image_size;

  Dataset d;
  d.task = Task::classification;
  d.split = split;
  d.num_classes = num_classes;
  d.channels = cfg.in_channels;
  d.height = d.width = s;
  d.images.resize(count * cfg.in_channels * s * s);
  d.labels.resize(count);

  std::vector<std::vector<double>> sigs;
  sigs.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c)
    sigs.push_back(data_detail::signature_image(seed, c, s));

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % num_classes;
    d.labels[i] = static_cast<std::uint16_t>(cls);
    const double amp =
        cfg.amp_lo + (cfg.amp_hi - cfg.amp_lo) *
                         rng::uniform01(data_detail::item_key(seed, split, i, 0xA3B));
    float* dst = d.images.data() + i * d.pixels_per_image();
    for (std::size_t ch = 0; ch < cfg.in_channels; ++ch)
      for (std::size_t px = 0; px < s * s; ++px) {
        const double noise =
            cfg.noise_sigma == 0.0
                ? 0.0
                : cfg.noise_sigma *
                      rng::normal(data_detail::item_key(seed, split, i, (ch * s * s + px) + 0x1000));
        dst[ch * s * s + px] = static_cast<float>(amp * sigs[cls][px] + noise);
      }
  }
  return d;
}

// Axis-aligned rectangular regions, each textured with its class signature.
inline Dataset gen_region_segmentation(std::size_t num_classes, std::size_t count,
                                       std::uint64_t seed, const DataConfig& cfg,
                                       Split split = Split::train) {
  if (num_classes < 2) throw contract_error("segmentation needs at least 2 classes");
  if (count < 1) throw contract_error("dataset must contain at least one item");
  if (cfg.min_regions < 1 || cfg.max_regions > 4 || cfg.min_regions > cfg.max_regions)
    throw contract_error("region count must lie in [1, 4]");
  const std::size_t s = cfg.image_size;
  if (s < 2 * cfg.min_region_extent) throw contract_error("image too small for region extents");

  Dataset d;
  d.task = Task::segmentation;
  d.split = split;
  d.num_classes = num_classes;
  d.channels = cfg.in_channels;
  d.height = d.width = s;
  d.images.resize(count * cfg.in_channels * s * s);
  d.labels.resize(count * s * s);

  std::vector<std::vector<double>> sigs;
  sigs.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c)
    sigs.push_back(data_detail::signature_image(seed, c, s));

  for (std::size_t i = 0; i < count; ++i) {
    rng::Stream st(data_detail::item_key(seed, split, i, 0x9E0));
    const std::size_t nregions = cfg.min_regions == cfg.max_regions
                                     ? cfg.min_regions
                                     : st.uniform_int(cfg.min_regions, cfg.max_regions);
    const std::size_t lo = cfg.min_region_extent, hi = s - cfg.min_region_extent;
    const std::size_t xs = st.uniform_int(lo, hi);  // vertical split column
    const std::size_t ys = st.uniform_int(lo, hi);  // horizontal split row
    const bool vertical_first = st.uniform_int(0, 1) == 1;

    // Distinct classes per region when possible.
    std::vector<std::size_t> classes(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) classes[c] = c;
    for (std::size_t c = 0; c + 1 < num_classes; ++c)
      std::swap(classes[c], classes[st.uniform_int(c, num_classes - 1)]);
    classes.resize(std::max<std::size_t>(nregions, 1));

    auto region_of = [&](std::size_t y, std::size_t x) -> std::size_t {
      switch (nregions) {
        case 1: return 0;
        case 2: return vertical_first ? (x >= xs ? 1 : 0) : (y >= ys ? 1 : 0);
        case 3:
          if (vertical_first) return x < xs ? 0 : (y < ys ? 1 : 2);
          return y < ys ? 0 : (x < xs ? 1 : 2);
        default: return (y >= ys ? 2 : 0) + (x >= xs ? 1 : 0);
      }
    };

    const double amp =
        cfg.amp_lo + (cfg.amp_hi - cfg.amp_lo) *
                         rng::uniform01(data_detail::item_key(seed, split, i, 0xA3B));
    float* dst = d.images.data() + i * d.pixels_per_image();
    std::uint16_t* lab = d.labels.data() + i * s * s;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t cls = classes[region_of(y, x)];
        lab[y * s + x] = static_cast<std::uint16_t>(cls);
        for (std::size_t ch = 0; ch < cfg.in_channels; ++ch) {
          const double noise =
              cfg.noise_sigma == 0.0
                  ? 0.0
                  : cfg.noise_sigma * rng::normal(data_detail::item_key(
                                          seed, split, i, (ch * s * s + y * s + x) + 0x1000));
          dst[ch * s * s + y * s + x] =
              static_cast<float>(amp * sigs[cls][y * s + x] + noise);
        }
      }
  }
  return d;
}

// Modal class per patch, ties resolved toward the smaller class index.
inline std::vector<std::uint16_t> patch_majority_label(const std::vector<std::uint16_t>& label_map,
                                                       std::size_t height, std::size_t width,
                                                       std::size_t patch_size) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0)
    throw contract_error("label map " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by patch size " + std::to_string(patch_size));
  if (label_map.size() != height * width)
    throw contract_error("label map size does not match dimensions");
  const std::size_t gh = height / patch_size, gw = width / patch_size;
  std::vector<std::uint16_t> out(gh * gw);
  std::vector<std::pair<std::uint16_t, std::uint32_t>> counts;  // (class, occurrences)
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      counts.clear();
      for (std::size_t py = 0; py < patch_size; ++py)
        for (std::size_t px = 0; px < patch_size; ++px) {
          const std::uint16_t c = label_map[(gy * patch_size + py) * width + gx * patch_size + px];
          auto it = std::find_if(counts.begin(), counts.end(),
                                 [c](const auto& e) { return e.first == c; });
          if (it == counts.end())
            counts.emplace_back(c, 1);
          else
            it->second += 1;
        }
      std::uint16_t best = 0;
      std::uint32_t best_count = 0;
      for (const auto& [cls, cnt] : counts)
        if (cnt > best_count || (cnt == best_count && cls < best)) {  // ties go to the smaller class
          best_count = cnt;
          best = cls;
        }
      out[gy * gw + gx] = best;
    }
  return out;
}

namespace data_detail {
inline constexpr char kMagic[4] = {'V', 'I', 'M', 'D'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace data_detail

inline void save_dataset(const Dataset& d, const std::string& path) {
  if (d.count() < 1) throw contract_error("refusing to save an empty dataset");
  io::Writer w;
  w.magic(data_detail::kMagic);
  w.pod<std::uint32_t>(data_detail::kVersion);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(d.task));
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(d.split));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(d.num_classes));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(d.count()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(d.channels));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(d.height));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(d.width));
  w.pod_array(d.images.data(), d.images.size());
  w.pod_array(d.labels.data(), d.labels.size());
  w.pod<std::uint64_t>(io::fnv1a_bytes(w.bytes().data(), w.bytes().size()));
  w.to_file(path);
}

inline Dataset load_dataset(const std::string& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(data_detail::kMagic, "dataset");
  const auto version = r.pod<std::uint32_t>();
  if (version != data_detail::kVersion)
    throw format_error(path + ": unsupported dataset version " + std::to_string(version) +
                       " at byte 4");
  Dataset d;
  d.task = static_cast<Task>(r.pod<std::uint8_t>());
  d.split = static_cast<Split>(r.pod<std::uint8_t>());
  d.num_classes = r.pod<std::uint32_t>();
  const auto m = r.pod<std::uint32_t>();
  d.channels = r.pod<std::uint32_t>();
  d.height = r.pod<std::uint32_t>();
  d.width = r.pod<std::uint32_t>();
  const std::size_t npix = static_cast<std::size_t>(m) * d.channels * d.height * d.width;
  d.images = r.pod_array<float>(npix);
  const std::size_t nlab = d.task == Task::classification
                               ? m
                               : static_cast<std::size_t>(m) * d.height * d.width;
  d.labels = r.pod_array<std::uint16_t>(nlab);
  const std::size_t check_at = r.pos();
  const auto stored = r.pod<std::uint64_t>();
  const std::uint64_t computed = io::fnv1a_bytes(r.bytes().data(), check_at);
  if (stored != computed)
    throw format_error(path + ": checksum mismatch at byte " + std::to_string(check_at));
  if (r.remaining() != 0)
    throw format_error(path + ": trailing bytes at " + std::to_string(r.pos()));
  for (std::uint16_t lab : d.labels)
    if (lab >= d.num_classes)
      throw format_error(path + ": label " + std::to_string(lab) + " out of range");
  return d;
}

inline std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = io::fnv1a_bytes(reinterpret_cast<const char*>(d.images.data()),
                                    d.images.size() * sizeof(float));
  h ^= io::fnv1a_bytes(reinterpret_cast<const char*>(d.labels.data()),
                       d.labels.size() * sizeof(std::uint16_t));
  return rng::mix(h ^ (static_cast<std::uint64_t>(d.task) << 32) ^ d.num_classes);
}

}  // namespace vimoe
