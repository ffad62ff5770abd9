// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single entry point wiring data generation, training, counting, and routing
// analysis into reproducible commands. Every command finishes by printing one
// JSON summary line to stdout; file artifacts land under --out.
//
// Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
// failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vimoe/analysis.hpp"
#include "vimoe/checkpoint.hpp"
#include "vimoe/config.hpp"
#include "vimoe/counting.hpp"
#include "vimoe/data.hpp"
#include "vimoe/model.hpp"
#include "vimoe/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (std::size_t v : parse_size_list(csv)) out.push_back(v);
  return out;
}

std::size_t infer_classes(const vimoe::RoutingLog& log) {
  std::int32_t mx = -1;
  for (const auto& r : log.records) mx = std::max(mx, r.label);
  if (mx < 0) throw vimoe::contract_error("routing log carries no labelled records");
  return static_cast<std::size_t>(mx) + 1;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw vimoe::format_error("cannot open " + path + " for writing");
  f << text;
}

struct DataGenArgs {
  std::string task = "cls";
  std::size_t classes = 8;
  std::size_t count = 512;
  std::uint64_t seed = 1;
  std::string split = "train";
  std::string out;
  std::size_t image_size = 28;
  std::size_t channels = 1;
  double noise = 0.3;
};

int run_data_gen(const DataGenArgs& a) {
  vimoe::DataConfig dc;
  dc.image_size = a.image_size;
  dc.in_channels = a.channels;
  dc.noise_sigma = a.noise;
  const vimoe::Split split = a.split == "test" ? vimoe::Split::test : vimoe::Split::train;
  vimoe::Dataset d = a.task == "seg"
                         ? vimoe::gen_region_segmentation(a.classes, a.count, a.seed, dc, split)
                         : vimoe::gen_cluster_classification(a.classes, a.count, a.seed, dc, split);
  vimoe::save_dataset(d, a.out);
  emit(json{{"cmd", "data gen"},
            {"task", a.task},
            {"classes", a.classes},
            {"count", a.count},
            {"seed", a.seed},
            {"split", a.split},
            {"path", a.out}});
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::optional<std::string>& eval_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
  vimoe::RunConfig rc = vimoe::load_run_config(config_path);
  if (seed_override) rc.train.seed = *seed_override;
  vimoe::Dataset train_ds = vimoe::load_dataset(data_path);
  vimoe::Dataset eval_ds = eval_path ? vimoe::load_dataset(*eval_path) : train_ds;
  rc.model.num_classes = train_ds.num_classes;
  rc.apply_task_defaults(train_ds.task);
  if (train_ds.task == vimoe::Task::segmentation)
    rc.model.routing_mode = vimoe::RoutingMode::token;

  vimoe::ViMoEModel m = vimoe::build(rc.model, rc.train.seed);
  vimoe::TrainOutput out = vimoe::train(m, train_ds, eval_ds, rc.train, out_dir);
  json logs = json::array();
  for (const auto& [epoch, log] : out.train_logs) {
    char name[64];
    std::snprintf(name, sizeof name, "routing_train_epoch%03zu.vimr", epoch);
    logs.push_back(std::string(name));
  }
  emit(json{{"cmd", "train"},
            {"epochs", rc.train.epochs},
            {"alpha", rc.model.alpha},
            {"seed", rc.train.seed},
            {"final_metric", out.record.final_metric()},
            {"final_task_loss", out.record.task_loss.back()},
            {"final_aux_loss", out.record.aux_loss.back()},
            {"checkpoint", out_dir + "/checkpoint.vimo"},
            {"run_record", out_dir + "/run_record.csv"},
            {"train_logs", logs},
            {"eval_log", out_dir + "/routing_eval.vimr"},
            {"out", out_dir}});
  return 0;
}

int run_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& data_path, const std::string& out_dir) {
  vimoe::RunConfig rc = vimoe::load_run_config(config_path);
  vimoe::Dataset ds = vimoe::load_dataset(data_path);
  rc.model.num_classes = ds.num_classes;
  rc.apply_task_defaults(ds.task);
  if (ds.task == vimoe::Task::segmentation) rc.model.routing_mode = vimoe::RoutingMode::token;
  vimoe::ViMoEModel m = vimoe::build(rc.model, rc.train.seed);
  vimoe::load_model(m, ckpt_path);

  fs::create_directories(out_dir);
  vimoe::RoutingLog log;
  log.num_experts = static_cast<std::uint32_t>(rc.model.num_experts);
  log.top_k = static_cast<std::uint32_t>(rc.model.top_k);
  log.routing_mode = rc.model.routing_mode;
  log.depth = static_cast<std::uint32_t>(rc.model.depth);
  log.model_hash = vimoe::config_hash(rc.model);
  log.dataset_hash = vimoe::dataset_hash(ds);
  const double metric = vimoe::evaluate(m, ds, &log);
  const std::string log_path = out_dir + "/routing_eval.vimr";
  if (rc.model.moe_last_l > 0) vimoe::save_routing_log(log, log_path);
  emit(json{{"cmd", "eval"},
            {"metric", metric},
            {"items", ds.count()},
            {"log", rc.model.moe_last_l > 0 ? log_path : ""},
            {"out", out_dir}});
  return 0;
}

int run_scan(const std::string& config_path, const std::string& data_path,
             const std::optional<std::string>& eval_path, const std::string& l_csv,
             const std::string& n_csv, const std::string& shared_mode, const std::string& seeds_csv,
             std::size_t threads, const std::string& out_dir) {
  vimoe::RunConfig rc = vimoe::load_run_config(config_path);
  vimoe::Dataset train_ds = vimoe::load_dataset(data_path);
  vimoe::Dataset eval_ds = eval_path ? vimoe::load_dataset(*eval_path) : train_ds;
  rc.model.num_classes = train_ds.num_classes;
  rc.apply_task_defaults(train_ds.task);
  if (train_ds.task == vimoe::Task::segmentation)
    rc.model.routing_mode = vimoe::RoutingMode::token;

  std::vector<bool> shared_values;
  if (shared_mode == "both")
    shared_values = {false, true};
  else if (shared_mode == "true")
    shared_values = {true};
  else if (shared_mode == "false")
    shared_values = {false};
  else
    throw vimoe::format_error("--shared must be both, true, or false");

  const auto cells = vimoe::layer_scan(rc.model, rc.train, train_ds, eval_ds,
                                       parse_size_list(l_csv), parse_size_list(n_csv),
                                       shared_values, parse_u64_list(seeds_csv), threads, out_dir);
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.failed;
  emit(json{{"cmd", "scan"},
            {"cells", cells.size()},
            {"failed", failed},
            {"csv", out_dir + "/scan.csv"},
            {"out", out_dir}});
  return failed == 0 ? 0 : 3;
}

vimoe::ModelConfig counting_config(const std::string& preset, std::size_t experts,
                                   std::size_t last_l, std::size_t topk, bool shared,
                                   std::optional<std::size_t> classes) {
  vimoe::ModelConfig cfg = vimoe::preset_by_name(preset);
  cfg.num_experts = experts;
  cfg.moe_last_l = last_l;
  cfg.top_k = topk;
  cfg.shared_expert = shared;
  if (classes) cfg.num_classes = *classes;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale mixture-of-experts vision transformer laboratory"};
  app.require_subcommand(1);

  // data gen
  auto* data_cmd = app.add_subcommand("data", "Dataset utilities");
  data_cmd->require_subcommand(1);
  DataGenArgs ga;
  auto* gen = data_cmd->add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--task", ga.task, "cls or seg")->check(CLI::IsMember({"cls", "seg"}));
  gen->add_option("--classes", ga.classes, "number of classes");
  gen->add_option("--count", ga.count, "number of items");
  gen->add_option("--seed", ga.seed, "generator seed");
  gen->add_option("--split", ga.split, "train or test stream")
      ->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--out", ga.out, "output .vimd path")->required();
  gen->add_option("--image-size", ga.image_size, "square image size");
  gen->add_option("--channels", ga.channels, "image channels");
  gen->add_option("--noise", ga.noise, "pixel noise sigma");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  std::string t_config, t_data, t_out;
  std::string t_eval;
  std::uint64_t t_seed = 0;
  bool t_seed_set = false;
  train_cmd->add_option("--config", t_config, "key=value run config")->required();
  train_cmd->add_option("--data", t_data, "training dataset (.vimd)")->required();
  train_cmd->add_option("--eval-data", t_eval, "held-out dataset (.vimd)");
  train_cmd->add_option("--out", t_out, "output directory")->required();
  train_cmd->add_option("--seed", t_seed, "override the config seed")
      ->each([&](const std::string&) { t_seed_set = true; });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_config, e_ckpt, e_data, e_out;
  eval_cmd->add_option("--config", e_config)->required();
  eval_cmd->add_option("--ckpt", e_ckpt)->required();
  eval_cmd->add_option("--data", e_data)->required();
  eval_cmd->add_option("--out", e_out)->required();

  // scan
  auto* scan_cmd = app.add_subcommand("scan", "Grid of runs over (N, L, shared, seed)");
  std::string s_config, s_data, s_eval, s_out;
  std::string s_l = "0", s_n = "4", s_shared = "both", s_seeds = "1";
  std::size_t s_threads = 2;
  scan_cmd->add_option("--config", s_config)->required();
  scan_cmd->add_option("--data", s_data)->required();
  scan_cmd->add_option("--eval-data", s_eval);
  scan_cmd->add_option("--l-values", s_l, "comma list of L values");
  scan_cmd->add_option("--n-values", s_n, "comma list of expert counts");
  scan_cmd->add_option("--shared", s_shared, "both, true, or false");
  scan_cmd->add_option("--seeds", s_seeds, "comma list of seeds");
  scan_cmd->add_option("--threads", s_threads, "parallel grid cells");
  scan_cmd->add_option("--out", s_out)->required();

  // count params / count flops
  auto* count_cmd = app.add_subcommand("count", "Parameter and FLOPs accounting");
  count_cmd->require_subcommand(1);
  std::string c_preset = "vit-s-14";
  std::size_t c_experts = 8, c_last_l = 0, c_topk = 1, c_resolution = 224;
  bool c_shared = false, c_no_head = false;
  std::optional<std::size_t> c_classes;
  std::string c_routing = "image";
  auto add_count_opts = [&](CLI::App* cmd) {
    cmd->add_option("--preset", c_preset, "vit-tiny-lab or vit-s-14");
    cmd->add_option("--experts", c_experts, "routed experts per MoE layer");
    cmd->add_option("--last-l", c_last_l, "number of deepest MoE blocks");
    cmd->add_option("--topk", c_topk, "experts activated per routing unit");
    cmd->add_flag("--shared", c_shared, "include a shared expert");
    cmd->add_option("--classes", [&](const std::vector<std::string>& v) {
      c_classes = std::stoull(v.front());
      return true;
    }, "override class count");
  };
  auto* count_params_cmd = count_cmd->add_subcommand("params", "Exact parameter counts");
  add_count_opts(count_params_cmd);
  count_params_cmd->add_flag("--no-head", c_no_head, "exclude the classifier head");
  auto* count_flops_cmd = count_cmd->add_subcommand("flops", "Multiply-accumulate counts");
  add_count_opts(count_flops_cmd);
  count_flops_cmd->add_option("--resolution", c_resolution, "input resolution");
  count_flops_cmd->add_option("--routing", c_routing, "image or token")
      ->check(CLI::IsMember({"image", "token"}));

  // degree
  auto* degree_cmd = app.add_subcommand("degree", "Routing degree C(N,k)^L");
  std::size_t d_experts = 8, d_topk = 1, d_last_l = 2;
  degree_cmd->add_option("--experts", d_experts)->required();
  degree_cmd->add_option("--topk", d_topk);
  degree_cmd->add_option("--last-l", d_last_l)->required();

  // analyze
  auto* an_cmd = app.add_subcommand("analyze", "Routing log forensics");
  an_cmd->require_subcommand(1);
  std::string a_log, a_out;
  std::int32_t a_layer = 1;
  std::int64_t a_item = 0;
  double a_tau = 0.5;
  std::optional<std::size_t> a_classes;
  auto add_log_opt = [&](CLI::App* cmd) {
    cmd->add_option("--log", a_log, "routing log (.vimr)")->required();
  };
  auto add_classes_opt = [&](CLI::App* cmd) {
    cmd->add_option("--classes", [&](const std::vector<std::string>& v) {
      a_classes = std::stoull(v.front());
      return true;
    }, "class count (default: inferred from labels)");
  };
  auto* an_heatmap = an_cmd->add_subcommand("heatmap", "Class-by-expert heatmap CSV");
  add_log_opt(an_heatmap);
  add_classes_opt(an_heatmap);
  an_heatmap->add_option("--layer", a_layer, "layer, 1 = deepest");
  an_heatmap->add_option("--out", a_out, "output directory")->required();
  auto* an_load = an_cmd->add_subcommand("load", "Expert load vector");
  add_log_opt(an_load);
  an_load->add_option("--layer", a_layer, "layer, 1 = deepest");
  an_load->add_option("--out", a_out, "output directory");
  auto* an_recommend = an_cmd->add_subcommand("recommend", "Efficient-layer recommendation");
  add_log_opt(an_recommend);
  add_classes_opt(an_recommend);
  an_recommend->add_option("--tau", a_tau, "specialization threshold");
  an_recommend->add_option("--out", a_out, "output directory");
  auto* an_degree = an_cmd->add_subcommand("degree", "Empirical routing degree");
  add_log_opt(an_degree);
  auto* an_allocmap = an_cmd->add_subcommand("allocmap", "Expert allocation map (PPM)");
  add_log_opt(an_allocmap);
  an_allocmap->add_option("--item", a_item, "image id");
  an_allocmap->add_option("--layer", a_layer, "layer, 1 = deepest");
  an_allocmap->add_option("--out", a_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 1;
  }

  try {
    if (gen->parsed()) return run_data_gen(ga);
    if (train_cmd->parsed())
      return run_train(t_config, t_data,
                       t_eval.empty() ? std::nullopt : std::optional<std::string>(t_eval), t_out,
                       t_seed_set ? std::optional<std::uint64_t>(t_seed) : std::nullopt);
    if (eval_cmd->parsed()) return run_eval(e_config, e_ckpt, e_data, e_out);
    if (scan_cmd->parsed())
      return run_scan(s_config, s_data,
                      s_eval.empty() ? std::nullopt : std::optional<std::string>(s_eval), s_l, s_n,
                      s_shared, s_seeds, s_threads, s_out);
    if (count_params_cmd->parsed()) {
      const auto cfg = counting_config(c_preset, c_experts, c_last_l, c_topk, c_shared, c_classes);
      const auto with_head = vimoe::count_params(cfg, true);
      const auto no_head = vimoe::count_params(cfg, false);
      const auto& r = c_no_head ? no_head : with_head;
      emit(json{{"cmd", "count params"},
                {"preset", c_preset},
                {"experts", c_experts},
                {"last_l", c_last_l},
                {"topk", c_topk},
                {"shared", c_shared},
                {"total", r.total_params},
                {"activated", r.activated_params},
                {"total_millions", r.total_millions()},
                {"activated_millions", r.activated_millions()},
                {"total_millions_no_head", no_head.total_millions()},
                {"activated_millions_no_head", no_head.activated_millions()},
                {"csv", vimoe::count_report_csv_row(cfg, r)}});
      return 0;
    }
    if (count_flops_cmd->parsed()) {
      auto cfg = counting_config(c_preset, c_experts, c_last_l, c_topk, c_shared, c_classes);
      cfg.routing_mode = c_routing == "token" ? vimoe::RoutingMode::token : vimoe::RoutingMode::image;
      const auto r = vimoe::count_flops(cfg, c_resolution);
      emit(json{{"cmd", "count flops"},
                {"preset", c_preset},
                {"experts", c_experts},
                {"last_l", c_last_l},
                {"topk", c_topk},
                {"shared", c_shared},
                {"resolution", c_resolution},
                {"flops", r.flops},
                {"gflops", static_cast<double>(r.flops) / 1e9},
                {"total", r.total_params},
                {"activated", r.activated_params},
                {"csv", vimoe::count_report_csv_row(cfg, r)}});
      return 0;
    }
    if (degree_cmd->parsed()) {
      emit(json{{"cmd", "degree"},
                {"experts", d_experts},
                {"topk", d_topk},
                {"last_l", d_last_l},
                {"degree", vimoe::routing_degree(d_experts, d_topk, d_last_l)}});
      return 0;
    }
    if (an_cmd->parsed()) {
      const vimoe::RoutingLog log = vimoe::load_routing_log(a_log);
      if (an_heatmap->parsed()) {
        const std::size_t classes = a_classes ? *a_classes : infer_classes(log);
        const auto h = vimoe::build_heatmap(log, log.report_layer_to_block(a_layer), classes);
        fs::create_directories(a_out);
        const std::string path = a_out + "/heatmap_layer" + std::to_string(a_layer) + ".csv";
        write_text(path, vimoe::heatmap_csv(h));
        emit(json{{"cmd", "analyze heatmap"},
                  {"layer", a_layer},
                  {"block", h.block_index},
                  {"classes", classes},
                  {"specialization", vimoe::specialization_score(h)},
                  {"csv", path}});
        return 0;
      }
      if (an_load->parsed()) {
        const auto load = vimoe::expert_load(log, log.report_layer_to_block(a_layer));
        std::string path;
        if (!a_out.empty()) {
          fs::create_directories(a_out);
          path = a_out + "/load_layer" + std::to_string(a_layer) + ".csv";
          write_text(path, vimoe::load_csv(load));
        }
        emit(json{{"cmd", "analyze load"}, {"layer", a_layer}, {"load", load}, {"csv", path}});
        return 0;
      }
      if (an_recommend->parsed()) {
        const std::size_t classes = a_classes ? *a_classes : infer_classes(log);
        auto rec = vimoe::recommend_layers(vimoe::layer_reports(log, classes), log.num_experts,
                                           log.top_k, a_tau);
        std::string path;
        if (!a_out.empty()) {
          fs::create_directories(a_out);
          path = a_out + "/recommendation.csv";
          write_text(path, vimoe::recommendation_csv(rec));
        }
        json scores = json::array();
        for (const auto& r : rec.reports)
          scores.push_back(json{{"layer", r.report_layer},
                                {"specialization", r.specialization},
                                {"keep", r.keep}});
        emit(json{{"cmd", "analyze recommend"},
                  {"tau", a_tau},
                  {"keep_count", rec.keep_count},
                  {"degree", rec.degree},
                  {"flagged", rec.degree_below_guidance},
                  {"suggested_experts", rec.suggested_num_experts},
                  {"layers", scores},
                  {"csv", path}});
        return 0;
      }
      if (an_degree->parsed()) {
        const std::uint64_t bound =
            vimoe::routing_degree(log.num_experts, log.top_k, log.layers().size());
        emit(json{{"cmd", "analyze degree"},
                  {"empirical", vimoe::empirical_degree(log)},
                  {"bound", bound}});
        return 0;
      }
      if (an_allocmap->parsed()) {
        const auto bytes = vimoe::allocation_map(log, a_item, log.report_layer_to_block(a_layer));
        fs::create_directories(a_out);
        const std::string path = a_out + "/allocmap_item" + std::to_string(a_item) + "_layer" +
                                 std::to_string(a_layer) + ".ppm";
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        emit(json{{"cmd", "analyze allocmap"}, {"item", a_item}, {"layer", a_layer}, {"ppm", path}});
        return 0;
      }
    }
  } catch (const vimoe::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const vimoe::format_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
