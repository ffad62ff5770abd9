// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale fine-tuning loop: combined task and balancing loss, AdamW with
// layer-wise lr decay, warmup + cosine schedule, per-epoch metrics, routing
// logs, checkpoints, and the layer-scanning experiment driver. Everything is
// a pure function of (model seed, data, train seed).

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vimoe/checkpoint.hpp"
#include "vimoe/data.hpp"
#include "vimoe/model.hpp"
#include "vimoe/optimizer.hpp"
#include "vimoe/routing_log.hpp"

namespace vimoe {

enum class LogRouting : std::uint8_t { off = 0, final_epoch = 1, all = 2 };

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double peak_lr = 1e-3;
  double weight_decay = 0.05;
  double layer_decay = 0.65;
  double warmup_epochs = 1.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  double clip_norm = 1.0;
  LogRouting log_routing = LogRouting::final_epoch;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw contract_error("epochs and batch_size must be positive");
    if (peak_lr < 0) throw contract_error("peak_lr must be non-negative");
    if (layer_decay <= 0 || layer_decay > 1) throw contract_error("layer_decay out of (0, 1]");
    if (eval_every < 1) throw contract_error("eval_every must be positive");
  }
};

struct RunRecord {
  std::vector<double> task_loss;                 // per epoch
  std::vector<double> aux_loss;                  // per epoch, recomputed from the epoch's routing
  std::vector<double> metric;                    // per epoch, accuracy or token-mIoU
  std::vector<std::vector<std::vector<double>>> loads;  // [epoch][moe layer][expert]

  double final_metric() const { return metric.empty() ? 0.0 : metric.back(); }
};

struct TrainOutput {
  RunRecord record;
  std::vector<std::pair<std::size_t, RoutingLog>> train_logs;  // (epoch, log)
  RoutingLog eval_log;  // held-out routing at the final evaluation
};

namespace train_detail {

inline std::vector<int> token_labels_for_item(const Dataset& ds, std::size_t item,
                                              std::size_t patch_size) {
  // Label per token, [CLS] first with no class.
  std::vector<int> labels{-1};
  if (ds.task == Task::segmentation) {
    const auto patch = patch_majority_label(ds.label_map(item), ds.height, ds.width, patch_size);
    for (std::uint16_t v : patch) labels.push_back(static_cast<int>(v));
  }
  return labels;
}

inline void append_records(RoutingLog& log, const ForwardResult& fwd, const Dataset& ds,
                           std::size_t item, RoutingMode mode, std::size_t patch_size) {
  const std::vector<int> tok_labels = mode == RoutingMode::token
                                          ? token_labels_for_item(ds, item, patch_size)
                                          : std::vector<int>{};
  for (std::size_t l = 0; l < fwd.moe_block_indices.size(); ++l) {
    for (std::size_t u = 0; u < fwd.decisions[l].size(); ++u) {
      const GateDecision& d = fwd.decisions[l][u];
      RoutingRecord rec;
      rec.layer_index = static_cast<std::int32_t>(fwd.moe_block_indices[l]);
      rec.item_id = static_cast<std::int64_t>(item);
      if (mode == RoutingMode::image) {
        rec.token_index = -1;
        rec.label = ds.task == Task::classification ? ds.label(item) : -1;
      } else {
        rec.token_index = static_cast<std::int32_t>(u);
        rec.label = ds.task == Task::segmentation && u < tok_labels.size() ? tok_labels[u] : -1;
      }
      rec.selected.assign(d.selected.begin(), d.selected.end());
      rec.probs = d.probs;
      log.records.push_back(std::move(rec));
    }
  }
}

inline RoutingLog empty_log(const ViMoEModel& m, const Dataset& ds) {
  RoutingLog log;
  log.num_experts = static_cast<std::uint32_t>(m.cfg.num_experts);
  log.top_k = static_cast<std::uint32_t>(m.cfg.top_k);
  log.routing_mode = m.cfg.routing_mode;
  log.depth = static_cast<std::uint32_t>(m.cfg.depth);
  log.model_hash = config_hash(m.cfg);
  log.dataset_hash = dataset_hash(ds);
  return log;
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

inline void write_run_csv(const RunRecord& rec, const ViMoEModel& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw format_error("cannot open " + path + " for writing");
  f << "epoch,task_loss,aux_loss,metric";
  std::vector<std::size_t> blocks;
  for (std::size_t b = m.cfg.depth - m.cfg.moe_last_l; b < m.cfg.depth; ++b) blocks.push_back(b);
  for (std::size_t b : blocks)
    for (std::size_t e = 0; e < m.cfg.num_experts; ++e) f << ",load_b" << b << "_e" << e;
  f << "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t ep = 0; ep < rec.task_loss.size(); ++ep) {
    f << ep << "," << num(rec.task_loss[ep]) << "," << num(rec.aux_loss[ep]) << ","
      << num(rec.metric[ep]);
    for (const auto& layer : rec.loads[ep])
      for (double v : layer) f << "," << num(v);
    f << "\n";
  }
}

}  // namespace train_detail

// Task metric plus (optionally) the routing log of the sweep. Classification
// scores top-1 accuracy; segmentation scores token-level mean IoU against the
// patch-majority labels.
inline double evaluate(ViMoEModel& m, const Dataset& ds, RoutingLog* log = nullptr) {
  if ((ds.task == Task::classification) != (m.cfg.task == Task::classification))
    throw contract_error("model task does not match dataset task");
  const std::size_t count = ds.count();
  if (count == 0) throw contract_error("evaluate on an empty dataset");

  std::size_t hits = 0;
  std::vector<std::uint64_t> tp(m.cfg.num_classes, 0), fp(m.cfg.num_classes, 0),
      fn(m.cfg.num_classes, 0);

  for (std::size_t i = 0; i < count; ++i) {
    Tape tape;
    ForwardResult r = forward(tape, m, ds.image(i));
    if (log) train_detail::append_records(*log, r, ds, i, m.cfg.routing_mode, m.cfg.patch_size);
    if (ds.task == Task::classification) {
      hits += train_detail::argmax_row(r.logits, 0) == static_cast<std::size_t>(ds.label(i));
    } else {
      const auto want =
          patch_majority_label(ds.label_map(i), ds.height, ds.width, m.cfg.patch_size);
      for (std::size_t t = 0; t < want.size(); ++t) {
        const std::size_t got = train_detail::argmax_row(r.logits, t);
        if (got == want[t]) {
          tp[want[t]] += 1;
        } else {
          fp[got] += 1;
          fn[want[t]] += 1;
        }
      }
    }
  }
  if (ds.task == Task::classification)
    return static_cast<double>(hits) / static_cast<double>(count);

  double iou_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < m.cfg.num_classes; ++c) {
    const std::uint64_t uni = tp[c] + fp[c] + fn[c];
    if (uni == 0) continue;
    iou_sum += static_cast<double>(tp[c]) / static_cast<double>(uni);
    present += 1;
  }
  return present == 0 ? 0.0 : iou_sum / static_cast<double>(present);
}

// One full training run. Deterministic given (model state, cfg.seed). When
// out_dir is set, writes checkpoint.vimo, run_record.csv, and the routing
// logs there. Aborts with numeric_error if the loss leaves the real line;
// the partial record survives in the output.
inline TrainOutput train(ViMoEModel& m, const Dataset& train_ds, const Dataset& eval_ds,
                         const TrainConfig& cfg, const std::optional<std::string>& out_dir = {}) {
  cfg.validate();
  if ((train_ds.task == Task::classification) != (m.cfg.task == Task::classification))
    throw contract_error("model task does not match dataset task");

  const std::size_t count = train_ds.count();
  const std::size_t steps_per_epoch = (count + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::size_t warmup_steps =
      static_cast<std::size_t>(cfg.warmup_epochs * static_cast<double>(steps_per_epoch));

  AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay, cfg.layer_decay}, make_slots(m));
  TrainOutput out;
  if (out_dir) std::filesystem::create_directories(*out_dir);

  auto persist = [&] {
    if (!out_dir) return;
    save_model(m, *out_dir + "/checkpoint.vimo");
    train_detail::write_run_csv(out.record, m, *out_dir + "/run_record.csv");
    for (const auto& [epoch, log] : out.train_logs) {
      char name[64];
      std::snprintf(name, sizeof name, "/routing_train_epoch%03zu.vimr", epoch);
      save_routing_log(log, *out_dir + name);
    }
    if (!out.eval_log.records.empty())
      save_routing_log(out.eval_log, *out_dir + "/routing_eval.vimr");
  };

  std::size_t step = 0;
  double last_metric = 0.0;
  try {
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Seeded shuffle, independent of all other draws.
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    rng::Stream shuffle(rng::combine(rng::combine(cfg.seed, 0x5F17u), epoch));
    for (std::size_t i = 0; i + 1 < count; ++i)
      std::swap(order[i], order[shuffle.uniform_int(i, count - 1)]);

    const bool log_this_epoch = cfg.log_routing == LogRouting::all ||
                                (cfg.log_routing == LogRouting::final_epoch &&
                                 epoch + 1 == cfg.epochs);
    RoutingLog epoch_log = train_detail::empty_log(m, train_ds);
    std::vector<AuxLossAccumulator> epoch_acc;

    double task_sum = 0.0;
    for (std::size_t begin = 0; begin < count; begin += cfg.batch_size) {
      const std::size_t end = std::min(count, begin + cfg.batch_size);
      Tape tape;
      Tensor batch_task;
      BatchAuxState aux;
      for (std::size_t bi = begin; bi < end; ++bi) {
        const std::size_t item = order[bi];
        ForwardResult r = forward(tape, m, train_ds.image(item));
        Tensor item_loss;
        if (train_ds.task == Task::classification) {
          item_loss = cross_entropy(tape, r.logits, train_ds.label(item));
        } else {
          const auto patch = patch_majority_label(train_ds.label_map(item), train_ds.height,
                                                  train_ds.width, m.cfg.patch_size);
          item_loss = cross_entropy(tape, r.logits,
                                    std::vector<int>(patch.begin(), patch.end()));
        }
        batch_task = batch_task.defined() ? add(tape, batch_task, item_loss) : item_loss;
        aux.absorb(tape, r);

        if (epoch_acc.empty() && !r.moe_block_indices.empty())
          epoch_acc.assign(r.moe_block_indices.size(),
                           AuxLossAccumulator(m.cfg.num_experts, m.cfg.alpha));
        for (std::size_t l = 0; l < r.moe_block_indices.size(); ++l)
          for (const GateDecision& d : r.decisions[l]) epoch_acc[l].add(d);
        if (log_this_epoch)
          train_detail::append_records(epoch_log, r, train_ds, item, m.cfg.routing_mode,
                                       m.cfg.patch_size);
      }
      const double inv_bs = 1.0 / static_cast<double>(end - begin);
      Tensor task_mean = scale(tape, batch_task, inv_bs);
      Tensor loss = add(tape, task_mean, total_aux_loss(tape, aux, m.cfg.alpha));
      task_sum += task_mean.at(0) * static_cast<double>(end - begin);
      if (!std::isfinite(loss.at(0)))
        throw numeric_error("training loss diverged at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
      m.zero_grad();
      tape.backward(loss);
      clip_global_norm(opt.slots(), cfg.clip_norm);
      opt.step(schedule_lr(cfg.peak_lr, step, warmup_steps, total_steps));
      step += 1;
    }

    out.record.task_loss.push_back(task_sum / static_cast<double>(count));
    // Reported per-epoch balance loss recomputes the formula over the epoch's
    // full routing activity, matching any offline recomputation from the log.
    double aux_total = 0.0;
    std::vector<std::vector<double>> loads;
    for (const AuxLossAccumulator& acc : epoch_acc) {
      aux_total += acc.loss();
      loads.push_back(acc.f());
    }
    out.record.aux_loss.push_back(aux_total);
    out.record.loads.push_back(std::move(loads));

    const bool eval_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    if (eval_now) {
      if (epoch + 1 == cfg.epochs) {
        out.eval_log = train_detail::empty_log(m, eval_ds);
        last_metric = evaluate(m, eval_ds, &out.eval_log);
      } else {
        last_metric = evaluate(m, eval_ds);
      }
    }
    out.record.metric.push_back(last_metric);
    if (log_this_epoch) out.train_logs.emplace_back(epoch, std::move(epoch_log));
  }
  } catch (const numeric_error&) {
    persist();  // abort with the partial record on disk
    throw;
  }

  persist();
  return out;
}

struct ScanCell {
  std::size_t num_experts = 0;
  std::size_t last_l = 0;
  bool shared = false;
  std::uint64_t seed = 0;
  RunRecord record;
  bool failed = false;
  std::string error;
};

// Full grid of independent runs over (N, L, shared, seed). Cells run in
// parallel up to `threads`; each run stays single-threaded and deterministic.
// Per-run failures are captured in the cell, not propagated.
inline std::vector<ScanCell> layer_scan(const ModelConfig& base, const TrainConfig& tbase,
                                        const Dataset& train_ds, const Dataset& eval_ds,
                                        const std::vector<std::size_t>& l_values,
                                        const std::vector<std::size_t>& n_values,
                                        const std::vector<bool>& shared_values,
                                        const std::vector<std::uint64_t>& seeds,
                                        std::size_t threads = 1,
                                        const std::optional<std::string>& out_dir = {}) {
  std::vector<ScanCell> cells;
  for (std::size_t n : n_values)
    for (std::size_t l : l_values)
      for (bool sh : shared_values)
        for (std::uint64_t seed : seeds) {
          ScanCell c;
          c.num_experts = n;
          c.last_l = l;
          c.shared = sh;
          c.seed = seed;
          cells.push_back(c);
        }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      ScanCell& c = cells[i];
      try {
        ModelConfig cfg = base;
        cfg.moe_last_l = c.last_l;
        cfg.num_experts = c.num_experts;
        cfg.shared_expert = c.shared;
        TrainConfig tc = tbase;
        tc.seed = c.seed;
        ViMoEModel m = build(cfg, c.seed);
        std::optional<std::string> cell_dir;
        if (out_dir) {
          cell_dir = *out_dir + "/cell_N" + std::to_string(c.num_experts) + "_L" +
                     std::to_string(c.last_l) + (c.shared ? "_shared" : "_plain") + "_seed" +
                     std::to_string(c.seed);
        }
        c.record = train(m, train_ds, eval_ds, tc, cell_dir).record;
      } catch (const std::exception& e) {
        c.failed = true;
        c.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  pool.reserve(nthreads);
  for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream f(*out_dir + "/scan.csv", std::ios::trunc);
    f << "N,L,shared,seed,final_metric,failed\n";
    char buf[64];
    for (const ScanCell& c : cells) {
      std::snprintf(buf, sizeof buf, "%.17g", c.record.final_metric());
      f << c.num_experts << "," << c.last_l << "," << (c.shared ? 1 : 0) << "," << c.seed << ","
        << buf << "," << (c.failed ? 1 : 0) << "\n";
    }
  }
  return cells;
}

}  // namespace vimoe
