// lccnn: command line front end for the compression pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include "lccnn/lcc_io.hpp"
#include "lccnn/mnist.hpp"
#include "lccnn/pipeline.hpp"
#include "lccnn/pruning.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace lccnn;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigExit = 2;
constexpr int kStageExit = 3;

struct Overrides {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch;
  std::optional<double> lr;
  std::vector<double> lambdas;
  std::optional<int> train_limit;
  std::optional<int> test_limit;
  std::optional<std::string> algorithm;
  std::optional<int> terms;
  std::optional<int> slice_width;
  std::optional<std::string> policy;
  std::optional<double> target_db;
  std::optional<int> factors;
  std::optional<int> retrain_epochs;
  std::optional<bool> sharing;
  std::optional<std::string> lowering;
  std::vector<double> sweep;
  bool quiet = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "JSON pipeline config (flags override it)");
  app->add_option("--data", o.data, "MNIST directory (default: $LCCNN_DATA)");
  app->add_option("-o,--out", o.out, "output directory");
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--batch-size", o.batch, "mini-batch size");
  app->add_option("--lr", o.lr, "initial learning rate");
  app->add_option("--lambda", o.lambdas, "group lasso weight per layer (repeatable)");
  app->add_option("--train-limit", o.train_limit, "use the first N training images (0: all)");
  app->add_option("--test-limit", o.test_limit, "use the first N test images (0: all)");
  app->add_option("--algorithm", o.algorithm, "LCC algorithm: fp or fs");
  app->add_option("--terms", o.terms, "FP terms per row (S)");
  app->add_option("--slice-width", o.slice_width, "LCC slice width (0: floor(log2 rows))");
  app->add_option("--policy", o.policy, "match-baseline, fixed-db or fixed-factors");
  app->add_option("--target-db", o.target_db, "SQNR target for fixed-db");
  app->add_option("--factors", o.factors, "factor count for fixed-factors");
  app->add_option("--retrain-epochs", o.retrain_epochs, "retraining epochs after clustering");
  app->add_option("--sharing", o.sharing, "enable weight sharing (true/false)");
  app->add_option("--lowering", o.lowering, "conv lowering: fk or pk");
  app->add_flag("-q,--quiet", o.quiet, "only print results");
}

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (!o.data.empty()) c.data.root = o.data;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch) c.train.batch_size = *o.batch;
  if (o.lr) c.train.lr = *o.lr;
  if (!o.lambdas.empty()) c.lambdas = o.lambdas;
  if (o.train_limit) c.data.train_limit = *o.train_limit;
  if (o.test_limit) c.data.test_limit = *o.test_limit;
  if (o.algorithm) c.lcc.algorithm = parse_algorithm(*o.algorithm);
  if (o.terms) c.lcc.terms_per_row = *o.terms;
  if (o.slice_width) c.lcc.slice_width = *o.slice_width;
  if (o.policy) c.lcc.policy = parse_policy(*o.policy);
  if (o.target_db) c.lcc.target_db = *o.target_db;
  if (o.factors) c.lcc.factors = *o.factors;
  if (o.retrain_epochs) c.sharing.retrain_epochs = *o.retrain_epochs;
  if (o.sharing) c.sharing.enabled = *o.sharing;
  if (o.lowering) c.arch.lowering = parse_conv_method(*o.lowering);
  if (!o.sweep.empty()) c.sweep_lambdas = o.sweep;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

std::function<void(const std::string&)> logger(const Overrides& o) {
  if (o.quiet) return {};
  const auto start = std::chrono::steady_clock::now();
  return [start](const std::string& s) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "[" << std::fixed << std::setprecision(1) << t << "s] " << s << "\n";
  };
}

Datasets data_for(const PipelineConfig& c) {
  try {
    return load_datasets(c.data);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("data", e.what());
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw StageError("load", e.what());
  }
}

void write_checkpoint(const PipelineConfig& c, const Model& m, const std::string& stage,
                      const std::map<int, std::vector<std::vector<int>>>& clusters = {}) {
  fs::create_directories(c.output_dir);
  Checkpoint cp;
  cp.model = m;
  cp.stage = stage;
  cp.seed = c.seed;
  cp.provenance = "lccnn " + stage;
  cp.clusters = clusters;
  const auto path = (fs::path(c.output_dir) / ("model_" + stage + ".lcm")).string();
  save_checkpoint(cp, path);
  std::cout << "wrote " << path << "\n";
}

// Decompositions written by `decompose` / `pipeline`: lcc_layer<i>.lccd or lcc_layer<i>_map<k>.lccd.
std::vector<LayerLcc> read_lcc_dir(const std::string& dir, const Model& m) {
  std::vector<LayerLcc> out;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string base = (fs::path(dir) / ("lcc_layer" + std::to_string(i))).string();
    LayerLcc l;
    l.layer = static_cast<int>(i);
    if (fs::exists(base + ".lccd")) {
      l.parts.push_back(load_decomposition(base + ".lccd"));
    } else {
      for (int k = 0; fs::exists(base + "_map" + std::to_string(k) + ".lccd"); ++k) {
        l.parts.push_back(load_decomposition(base + "_map" + std::to_string(k) + ".lccd"));
      }
    }
    if (l.parts.empty()) continue;
    for (const auto& d : l.parts) {
      l.programs.push_back(to_adder_program(d));
      l.adds += count_additions(d);
    }
    out.push_back(std::move(l));
  }
  return out;
}

void print_summary(const CompressionReport& r) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& [stage, acc] : r.accuracy) std::cout << "accuracy " << stage << " " << acc << "\n";
  for (const auto& l : r.layers) {
    std::cout << "layer " << l.index << " (" << l.kind << ")";
    for (const auto& s : l.stages) std::cout << "  " << s.stage << " " << s.rows << "x" << s.cols << " adds=" << s.adds;
    std::cout << "\n";
  }
  std::cout << "total baseline adds " << r.total_baseline_adds << ", compressed adds " << r.total_compressed_adds
            << ", ratio " << (r.total_ratio.infinite ? std::string("inf") : std::to_string(r.total_ratio.value)) << "\n";
  if (r.lcc_unpruned_ratio) std::cout << "LCC alone on the unpruned model: ratio " << r.lcc_unpruned_ratio->value << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplierless neural network compression: pruning, weight sharing and LCC"};
  app.require_subcommand(1);
  Overrides o;
  std::string model_path, baseline_path, lcc_dir;
  std::string formats = "json,csv";

  auto* train_cmd = app.add_subcommand("train", "train the unregularized baseline");
  auto* prune_cmd = app.add_subcommand("prune", "train with group lasso and remove zero columns");
  auto* share_cmd = app.add_subcommand("share", "cluster columns of a pruned model and retrain with tied weights");
  auto* decompose_cmd = app.add_subcommand("decompose", "LCC-decompose every layer of a model");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "top-1 accuracy of a model (through adder programs with --lcc)");
  auto* report_cmd = app.add_subcommand("report", "compression report of a model against its baseline");
  auto* sweep_cmd = app.add_subcommand("sweep", "one pipeline run per lambda");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "all stages: train, prune, share, decompose, report");
  for (auto* c : {train_cmd, prune_cmd, share_cmd, decompose_cmd, evaluate_cmd, report_cmd, sweep_cmd, pipeline_cmd}) {
    add_common(c, o);
  }
  for (auto* c : {share_cmd, decompose_cmd, evaluate_cmd, report_cmd}) {
    c->add_option("-m,--model", model_path, "model checkpoint")->required();
  }
  for (auto* c : {evaluate_cmd, report_cmd}) c->add_option("--lcc", lcc_dir, "directory with lcc_layer*.lccd files");
  report_cmd->add_option("--baseline", baseline_path, "baseline checkpoint")->required();
  report_cmd->add_option("--format", formats, "json, csv or json,csv");
  sweep_cmd->add_option("--lambdas", o.sweep, "sweep values for the swept layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    const PipelineConfig cfg = resolve(o);
    PipelineHooks hooks;
    hooks.log = logger(o);

    if (*train_cmd) {
      const auto data = data_for(cfg);
      if (hooks.log) hooks.log("training baseline");
      Model m;
      try {
        m = train_baseline(cfg, data.train);
      } catch (const std::exception& e) {
        throw StageError("train", e.what());
      }
      std::cout << "test accuracy " << top1_accuracy(m, data.test) << "\n";
      write_checkpoint(cfg, m, "baseline");
    } else if (*prune_cmd) {
      bool any = false;
      for (double l : cfg.lambdas) any = any || l > 0.0;
      if (!any) throw ConfigError("prune needs a positive lambda (--lambda or config lambdas)");
      const auto data = data_for(cfg);
      if (hooks.log) hooks.log("proximal training");
      Model m;
      try {
        m = train_regularized(cfg, data.train);
      } catch (const std::exception& e) {
        throw StageError("prune", e.what());
      }
      const auto zeros = zero_groups(m, cfg.arch.lowering);
      for (std::size_t l = 0; l < zeros.size(); ++l) std::cout << "layer " << l << " zero groups " << zeros[l] << "\n";
      std::cout << "test accuracy " << top1_accuracy(m, data.test) << "\n";
      write_checkpoint(cfg, m, "pruned");
    } else if (*share_cmd) {
      const Checkpoint cp = read_checkpoint(model_path);
      const auto data = data_for(cfg);
      ShareOutcome s;
      try {
        s = share_and_retrain(cfg, cp.model, data.train);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError("share", e.what());
      }
      for (const auto& [layer, members] : s.clusters) {
        std::cout << "layer " << layer << ": " << members.size() << " clusters from "
                  << cp.model.layers[static_cast<std::size_t>(layer)].weight.cols() << " columns\n";
      }
      std::cout << "test accuracy " << top1_accuracy(s.model, data.test) << "\n";
      write_checkpoint(cfg, s.model, "shared", s.clusters);
    } else if (*decompose_cmd) {
      const Checkpoint cp = read_checkpoint(model_path);
      fs::create_directories(cfg.output_dir);
      std::vector<LayerLcc> d;
      try {
        d = decompose_model(cp.model, cfg.lcc, cfg.baseline, cfg.arch.lowering);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError("decompose", e.what());
      }
      for (const auto& layer : d) {
        for (std::size_t k = 0; k < layer.parts.size(); ++k) {
          std::string name = "lcc_layer" + std::to_string(layer.layer);
          if (layer.parts.size() > 1) name += "_map" + std::to_string(k);
          save_decomposition(layer.parts[k], (fs::path(cfg.output_dir) / (name + ".lccd")).string());
        }
        const auto csd = layer_csd_adds(cp.model.layers[static_cast<std::size_t>(layer.layer)], cfg.baseline, cfg.arch.lowering);
        std::cout << "layer " << layer.layer << ": lcc adds " << layer.adds << " (csd " << csd << "), sqnr "
                  << layer.sqnr_db << " dB\n";
      }
    } else if (*evaluate_cmd) {
      const Checkpoint cp = read_checkpoint(model_path);
      const auto data = data_for(cfg);
      if (lcc_dir.empty()) {
        std::cout << "test accuracy " << top1_accuracy(cp.model, data.test) << "\n";
      } else {
        const auto d = read_lcc_dir(lcc_dir, cp.model);
        if (d.empty()) throw StageError("evaluate", "no decompositions found in '" + lcc_dir + "'");
        std::cout << "test accuracy (adder programs) " << program_accuracy(cp.model, d, cfg.arch.lowering, data.test) << "\n";
      }
    } else if (*report_cmd) {
      const Checkpoint base = read_checkpoint(baseline_path);
      const Checkpoint cp = read_checkpoint(model_path);
      std::vector<LayerLcc> d;
      if (!lcc_dir.empty()) {
        d = read_lcc_dir(lcc_dir, cp.model);
        for (auto& l : d) {
          const Layer& layer = cp.model.layers[static_cast<std::size_t>(l.layer)];
          if (layer.kind == LayerKind::Conv) {
            std::vector<std::int64_t> adds;
            for (const auto& p : l.parts) adds.push_back(count_additions(p));
            l.adds = conv_addition_cost(lower_conv(layer.weight, layer.conv, cfg.arch.lowering), adds);
          }
        }
      }
      const bool shared = cp.stage == "shared";
      CompressionReport r = build_report(cfg, base.model, cp.model, shared ? &cp.model : nullptr, lcc_dir.empty() ? nullptr : &d);
      r.label = cp.stage;
      const bool json = formats.find("json") != std::string::npos;
      const bool csv = formats.find("csv") != std::string::npos;
      if (!json && !csv) throw ConfigError("--format must name json and/or csv");
      emit_report(r, cfg.output_dir, "report", json, csv);
      print_summary(r);
    } else if (*sweep_cmd) {
      if (cfg.sweep_lambdas.empty()) throw ConfigError("sweep needs --lambdas or sweep.lambdas in the config");
      const auto data = data_for(cfg);
      const auto results = run_sweep(cfg, data, hooks);
      for (std::size_t i = 0; i < results.size(); ++i) {
        std::cout << "== lambda " << cfg.sweep_lambdas[i] << "\n";
        print_summary(results[i].report);
      }
    } else if (*pipeline_cmd) {
      const auto data = data_for(cfg);
      const auto result = run_pipeline(cfg, data, hooks);
      print_summary(result.report);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kStageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageExit;
  }
  return 0;
}
