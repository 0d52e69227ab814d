#include "lccnn/pipeline.hpp"

#include "lccnn/lcc_io.hpp"
#include "lccnn/mnist.hpp"
#include "lccnn/pruning.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace lccnn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SqnrPolicy p) {
  switch (p) {
    case SqnrPolicy::MatchBaseline: return "match-baseline";
    case SqnrPolicy::FixedDb: return "fixed-db";
    case SqnrPolicy::FixedFactors: return "fixed-factors";
  }
  return "?";
}

SqnrPolicy parse_policy(const std::string& s) {
  if (s == "match-baseline") return SqnrPolicy::MatchBaseline;
  if (s == "fixed-db") return SqnrPolicy::FixedDb;
  if (s == "fixed-factors") return SqnrPolicy::FixedFactors;
  throw ConfigError("unknown SQNR policy '" + s + "' (match-baseline, fixed-db, fixed-factors)");
}

double PipelineConfig::lambda(int layer) const {
  return layer >= 0 && layer < static_cast<int>(lambdas.size()) ? lambdas[static_cast<std::size_t>(layer)] : 0.0;
}

namespace {

int layer_count(const PipelineConfig& cfg) {
  const int dense = static_cast<int>(cfg.arch.sizes.size()) - 1;
  return cfg.arch.type == "conv" ? dense + 1 : dense;
}

bool is_conv_layer(const PipelineConfig& cfg, int layer) { return cfg.arch.type == "conv" && layer == 0; }

}  // namespace

void PipelineConfig::validate() const {
  if (arch.type != "mlp" && arch.type != "conv") throw ConfigError("model.type must be 'mlp' or 'conv'");
  if (arch.sizes.size() < 2) throw ConfigError("model.sizes needs at least two entries");
  for (int s : arch.sizes)
    if (s < 1) throw ConfigError("model.sizes entries must be >= 1");
  if (arch.type == "conv") {
    try {
      arch.conv.validate();
    } catch (const ConfigError&) {
      throw ConfigError("model.conv is not a valid convolution shape");
    }
    if (arch.sizes.front() != arch.conv.in_maps * arch.conv.input_size * arch.conv.input_size) {
      throw ConfigError("model.sizes[0] must equal in_maps * input_size^2 for a conv model");
    }
  }
  train.validate();
  const int layers = layer_count(*this);
  if (static_cast<int>(lambdas.size()) > layers) throw ConfigError("lambdas lists more layers than the model has");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambdas must be finite and >= 0");
  for (double l : sweep_lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("sweep.lambdas must be finite and >= 0");
  if (sweep_layer < 0 || sweep_layer >= layers) throw ConfigError("sweep.layer does not exist");
  if (sharing.retrain_epochs < 0) throw ConfigError("sharing.retrain_epochs must be >= 0");
  if (sharing.enabled) for (int l : sharing.layers) {
    if (l < 0 || l >= layers) throw ConfigError("sharing.layers references layer " + std::to_string(l) + " which does not exist");
    if (is_conv_layer(*this, l)) throw ConfigError("sharing applies to dense layers only");
  }
  ApOptions ap;
  ap.damping = sharing.damping;
  ap.max_iter = sharing.max_iter;
  ap.convergence_iter = sharing.convergence_iter;
  ap.validate();
  for (int l : lcc.layers)
    if (l < 0 || l >= layers) throw ConfigError("lcc.layers references layer " + std::to_string(l) + " which does not exist");
  if (lcc.terms_per_row < 1) throw ConfigError("lcc.terms_per_row must be >= 1");
  if (lcc.slice_width < 0) throw ConfigError("lcc.slice_width must be >= 0");
  if (lcc.policy == SqnrPolicy::FixedFactors && lcc.algorithm != LccAlgorithm::FP) {
    throw ConfigError("lcc.policy fixed-factors requires the FP algorithm");
  }
  if (lcc.policy == SqnrPolicy::FixedFactors && lcc.factors < 1) throw ConfigError("lcc.factors must be >= 1");
  if (lcc.policy == SqnrPolicy::FixedDb && !(lcc.target_db > 0.0)) throw ConfigError("lcc.target_db must be > 0");
  if (lcc.max_additions < 1) throw ConfigError("lcc.max_additions must be >= 1");
  baseline.validate();
  if (data.train_limit < 0 || data.test_limit < 0) throw ConfigError("data limits must be >= 0");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig config_from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, "", {"model", "train", "lambdas", "sharing", "lcc", "baseline", "data", "output_dir", "seed", "sweep",
                       "save_artifacts"});
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, "model", {"type", "sizes", "conv", "lowering"});
      read(m, "type", c.arch.type);
      read(m, "sizes", c.arch.sizes);
      if (m.contains("conv")) {
        const auto& cv = m["conv"];
        check_keys(cv, "model.conv", {"in_maps", "out_maps", "kernel", "input_size"});
        read(cv, "in_maps", c.arch.conv.in_maps);
        read(cv, "out_maps", c.arch.conv.out_maps);
        read(cv, "kernel", c.arch.conv.kernel);
        read(cv, "input_size", c.arch.conv.input_size);
      }
      if (m.contains("lowering")) c.arch.lowering = parse_conv_method(m["lowering"].get<std::string>());
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, "train", {"epochs", "batch_size", "lr", "momentum", "lr_decay", "decay_interval", "optimizer",
                              "adam_beta1", "adam_beta2", "adam_eps"});
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "lr", c.train.lr);
      read(t, "momentum", c.train.momentum);
      read(t, "lr_decay", c.train.lr_decay);
      read(t, "decay_interval", c.train.decay_interval);
      read(t, "adam_beta1", c.train.adam_beta1);
      read(t, "adam_beta2", c.train.adam_beta2);
      read(t, "adam_eps", c.train.adam_eps);
      if (t.contains("optimizer")) {
        const auto o = t["optimizer"].get<std::string>();
        if (o == "sgd") {
          c.train.optimizer = OptimizerKind::SgdMomentum;
        } else if (o == "adam") {
          c.train.optimizer = OptimizerKind::Adam;
        } else {
          throw ConfigError("train.optimizer must be 'sgd' or 'adam'");
        }
      }
    }
    read(j, "lambdas", c.lambdas);
    if (j.contains("sharing")) {
      const auto& s = j["sharing"];
      check_keys(s, "sharing", {"enabled", "layers", "retrain_epochs", "damping", "max_iter", "convergence_iter",
                                "preference", "normalize"});
      read(s, "enabled", c.sharing.enabled);
      read(s, "layers", c.sharing.layers);
      read(s, "retrain_epochs", c.sharing.retrain_epochs);
      read(s, "damping", c.sharing.damping);
      read(s, "max_iter", c.sharing.max_iter);
      read(s, "convergence_iter", c.sharing.convergence_iter);
      read(s, "normalize", c.sharing.normalize);
      if (s.contains("preference") && !s["preference"].is_null()) c.sharing.preference = s["preference"].get<double>();
    }
    if (j.contains("lcc")) {
      const auto& l = j["lcc"];
      check_keys(l, "lcc", {"enabled", "algorithm", "terms_per_row", "slice_width", "policy", "target_db", "factors",
                            "max_additions", "layers", "unpruned_reference"});
      read(l, "enabled", c.lcc.enabled);
      if (l.contains("algorithm")) c.lcc.algorithm = parse_algorithm(l["algorithm"].get<std::string>());
      read(l, "terms_per_row", c.lcc.terms_per_row);
      read(l, "slice_width", c.lcc.slice_width);
      if (l.contains("policy")) c.lcc.policy = parse_policy(l["policy"].get<std::string>());
      read(l, "target_db", c.lcc.target_db);
      read(l, "factors", c.lcc.factors);
      read(l, "max_additions", c.lcc.max_additions);
      read(l, "layers", c.lcc.layers);
      read(l, "unpruned_reference", c.lcc.unpruned_reference);
    }
    if (j.contains("baseline")) {
      const auto& b = j["baseline"];
      check_keys(b, "baseline", {"frac_bits", "int_bits"});
      read(b, "frac_bits", c.baseline.frac_bits);
      read(b, "int_bits", c.baseline.int_bits);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      check_keys(d, "data", {"root", "train_limit", "test_limit"});
      read(d, "root", c.data.root);
      read(d, "train_limit", c.data.train_limit);
      read(d, "test_limit", c.data.test_limit);
    }
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      check_keys(s, "sweep", {"lambdas", "layer"});
      read(s, "lambdas", c.sweep_lambdas);
      read(s, "layer", c.sweep_layer);
    }
    read(j, "output_dir", c.output_dir);
    read(j, "seed", c.seed);
    read(j, "save_artifacts", c.save_artifacts);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.seed = c.seed;
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["model"] = {{"type", c.arch.type},
                {"sizes", c.arch.sizes},
                {"conv",
                 {{"in_maps", c.arch.conv.in_maps},
                  {"out_maps", c.arch.conv.out_maps},
                  {"kernel", c.arch.conv.kernel},
                  {"input_size", c.arch.conv.input_size}}},
                {"lowering", to_string(c.arch.lowering)}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"lr_decay", c.train.lr_decay},
                {"decay_interval", c.train.decay_interval},
                {"optimizer", c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps}};
  j["lambdas"] = c.lambdas;
  j["sharing"] = {{"enabled", c.sharing.enabled},
                  {"layers", c.sharing.layers},
                  {"retrain_epochs", c.sharing.retrain_epochs},
                  {"damping", c.sharing.damping},
                  {"max_iter", c.sharing.max_iter},
                  {"convergence_iter", c.sharing.convergence_iter},
                  {"preference", c.sharing.preference ? json(*c.sharing.preference) : json(nullptr)},
                  {"normalize", c.sharing.normalize}};
  j["lcc"] = {{"enabled", c.lcc.enabled},
              {"algorithm", to_string(c.lcc.algorithm)},
              {"terms_per_row", c.lcc.terms_per_row},
              {"slice_width", c.lcc.slice_width},
              {"policy", to_string(c.lcc.policy)},
              {"target_db", c.lcc.target_db},
              {"factors", c.lcc.factors},
              {"max_additions", c.lcc.max_additions},
              {"layers", c.lcc.layers},
              {"unpruned_reference", c.lcc.unpruned_reference}};
  j["baseline"] = {{"frac_bits", c.baseline.frac_bits}, {"int_bits", c.baseline.int_bits}};
  j["data"] = {{"root", c.data.root}, {"train_limit", c.data.train_limit}, {"test_limit", c.data.test_limit}};
  j["sweep"] = {{"lambdas", c.sweep_lambdas}, {"layer", c.sweep_layer}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["save_artifacts"] = c.save_artifacts;
  return j.dump(2) + "\n";
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

Datasets load_datasets(const DataConfig& cfg) {
  const std::string root = resolve_data_root(cfg.root);
  if (root.empty()) throw ConfigError("dataset root is not set (use --data or the LCCNN_DATA environment variable)");
  const auto p = mnist_paths(root);
  Datasets d;
  d.train = load_mnist_idx(p.train_images, p.train_labels, cfg.train_limit);
  d.test = load_mnist_idx(p.test_images, p.test_labels, cfg.test_limit);
  return d;
}

Model build_model(const PipelineConfig& cfg) {
  if (cfg.arch.type == "mlp") return make_mlp(cfg.arch.sizes, cfg.seed);
  Model m;
  m.layers.push_back(make_conv(cfg.arch.conv, Activation::ReLU));
  int in = m.layers.back().out_features();
  for (std::size_t i = 1; i < cfg.arch.sizes.size(); ++i) {
    const bool last = i + 1 == cfg.arch.sizes.size();
    m.layers.push_back(make_dense(in, cfg.arch.sizes[i], last ? Activation::Identity : Activation::ReLU));
    in = cfg.arch.sizes[i];
  }
  init_params(m, cfg.seed);
  return m;
}

namespace {

TrainConfig seeded(const PipelineConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = cfg.seed;
  return t;
}

GroupStructure groups_for(const Layer& l, ConvMethod lowering) {
  return GroupStructure::for_layer(l, lowering == ConvMethod::PK ? GroupKind::ConvPK : GroupKind::ConvFK);
}

}  // namespace

Model train_baseline(const PipelineConfig& cfg, const Dataset& train_set) {
  Model m = build_model(cfg);
  train(m, train_set, seeded(cfg));
  snap_to_float(m);
  return m;
}

Model train_regularized(const PipelineConfig& cfg, const Dataset& train_set) {
  Model m = build_model(cfg);
  std::vector<GroupStructure> gs;
  for (const auto& l : m.layers) gs.push_back(groups_for(l, cfg.arch.lowering));
  TrainHooks hooks;
  hooks.after_step = [&](Model& model, double lr) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const double lambda = cfg.lambda(static_cast<int>(l));
      if (lambda > 0.0) apply_prox(model.layers[l], gs[l], lr * lambda);
    }
  };
  train(m, train_set, seeded(cfg), hooks);
  snap_to_float(m);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (cfg.lambda(static_cast<int>(l)) > 0.0 && m.layers[l].kind == LayerKind::Dense) prune_dense_layer(m.layers[l]);
  }
  return m;
}

std::vector<int> zero_groups(const Model& m, ConvMethod lowering) {
  std::vector<int> out;
  for (const auto& l : m.layers) {
    if (l.kind == LayerKind::Dense) {
      // zero columns plus raw inputs no pool gathers any more
      int zeros = count_zero_groups(l.weight, GroupStructure{});
      if (l.pooled()) {
        int covered = 0;
        for (const auto& p : l.pools) covered += static_cast<int>(p.size());
        zeros += l.input_dim - covered;
      }
      out.push_back(zeros);
    } else {
      out.push_back(count_zero_groups(l.weight, groups_for(l, lowering)));
    }
  }
  return out;
}

ShareOutcome share_and_retrain(const PipelineConfig& cfg, const Model& pruned, const Dataset& train_set) {
  ShareOutcome out{pruned, {}};
  std::vector<int> tied;
  std::vector<std::vector<int>> sizes;
  for (int l : cfg.sharing.layers) {
    Layer& layer = out.model.layers[static_cast<std::size_t>(l)];
    ApOptions ap;
    ap.damping = cfg.sharing.damping;
    ap.max_iter = cfg.sharing.max_iter;
    ap.convergence_iter = cfg.sharing.convergence_iter;
    ap.preference = cfg.sharing.preference;
    ap.seed = cfg.seed;
    const ClusterModel cm = cluster_columns(layer.weight, ap, cfg.sharing.normalize);
    tie_layer(layer, cm);
    tied.push_back(l);
    std::vector<int> s;
    for (const auto& m : cm.members) s.push_back(static_cast<int>(m.size()));
    sizes.push_back(std::move(s));
    out.clusters[l] = cm.members;
  }
  TrainConfig t = seeded(cfg);
  t.epochs = cfg.sharing.retrain_epochs;
  retrain_shared(out.model, tied, sizes, train_set, t);
  snap_to_float(out.model);
  return out;
}

LccDecomposition decompose_matrix(const Matrix& w, const LccConfig& cfg, const FixedPointConfig& baseline) {
  const int width = cfg.slice_width > 0 ? cfg.slice_width : default_slice_width(static_cast<int>(w.rows()));
  SqnrTarget target;
  if (cfg.policy == SqnrPolicy::MatchBaseline) target.match_baseline = baseline;
  if (cfg.policy == SqnrPolicy::FixedDb) target.target_db = cfg.target_db;
  if (cfg.algorithm == LccAlgorithm::FP) {
    FpOptions o;
    o.terms_per_row = cfg.terms_per_row;
    o.target = target;
    if (cfg.policy == SqnrPolicy::FixedFactors) o.max_factors = cfg.factors;
    return decompose_fp(w, width, o);
  }
  FsOptions o;
  o.target = target;
  o.max_additions = cfg.max_additions;
  return decompose_fs(w, width, o);
}

LayerLcc decompose_layer(const Model& m, int layer, const LccConfig& cfg, const FixedPointConfig& baseline,
                         ConvMethod lowering) {
  const Layer& l = m.layers.at(static_cast<std::size_t>(layer));
  LayerLcc out;
  out.layer = layer;
  if (l.kind == LayerKind::Dense) {
    out.parts.push_back(decompose_matrix(l.weight, cfg, baseline));
    out.programs.push_back(to_adder_program(out.parts.back()));
    out.adds = count_additions(out.parts.back());
    out.sqnr_db = out.parts.back().achieved_sqnr;
    return out;
  }
  const LoweredConv lc = lower_conv(l.weight, l.conv, lowering);
  std::vector<std::int64_t> adds;
  Matrix approx(conv_group_matrix(lc).rows(), lc.mats.front().cols());
  Eigen::Index at = 0;
  for (const auto& w : lc.mats) {
    out.parts.push_back(decompose_matrix(w, cfg, baseline));
    out.programs.push_back(to_adder_program(out.parts.back()));
    adds.push_back(count_additions(out.parts.back()));
    approx.middleRows(at, w.rows()) = reconstruct(out.parts.back());
    at += w.rows();
  }
  out.adds = conv_addition_cost(lc, adds);
  const Matrix stacked = conv_group_matrix(lc);
  out.sqnr_db = stacked.isZero(0.0) ? kInfDb : sqnr_db(stacked, approx);
  return out;
}

std::vector<LayerLcc> decompose_model(const Model& m, const LccConfig& cfg, const FixedPointConfig& baseline,
                                      ConvMethod lowering) {
  std::vector<int> layers = cfg.layers;
  if (layers.empty()) {
    layers.resize(m.layers.size());
    std::iota(layers.begin(), layers.end(), 0);
  }
  std::vector<LayerLcc> out;
  for (int l : layers) out.push_back(decompose_layer(m, l, cfg, baseline, lowering));
  return out;
}

Vector program_forward(const Model& m, const std::vector<LayerLcc>& lcc, ConvMethod lowering, const Vector& x) {
  Vector cur = x;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const Layer& l = m.layers[li];
    const LayerLcc* dec = nullptr;
    for (const auto& d : lcc)
      if (d.layer == static_cast<int>(li)) dec = &d;
    Vector z;
    if (l.kind == LayerKind::Dense) {
      const Vector in = l.pool(cur);
      z = dec ? execute_program(dec->programs.front(), in) : Vector(l.weight * in);
      z += l.bias;
    } else {
      const LoweredConv lc = lower_conv(l.weight, l.conv, lowering);
      if (dec) {
        z = conv_forward(lc, cur, [&](int k, const Vector& v) { return execute_program(dec->programs[static_cast<std::size_t>(k)], v); });
      } else {
        z = conv_forward(lc, cur);
      }
      const int pp = l.conv.out_size() * l.conv.out_size();
      for (int n = 0; n < l.conv.out_maps; ++n) z.segment(static_cast<Eigen::Index>(n) * pp, pp).array() += l.bias(n);
    }
    if (l.activation == Activation::ReLU) z = z.cwiseMax(0.0);
    cur = std::move(z);
  }
  return cur;
}

double program_accuracy(const Model& m, const std::vector<LayerLcc>& lcc, ConvMethod lowering, const Dataset& data) {
  return top1_accuracy(data, [&](const Vector& x) { return program_forward(m, lcc, lowering, x); });
}

std::int64_t layer_csd_adds(const Layer& l, const FixedPointConfig& cfg, ConvMethod lowering, std::int64_t* pooling) {
  if (l.kind == LayerKind::Dense) {
    const std::int64_t pool = l.pooled() ? pooling_adds(l.pools) : 0;
    if (pooling) *pooling = pool;
    return csd_matrix_cost(l.weight, cfg).adds + pool;
  }
  if (pooling) *pooling = 0;
  const LoweredConv lc = lower_conv(l.weight, l.conv, lowering);
  std::vector<std::int64_t> adds;
  for (const auto& w : lc.mats) adds.push_back(csd_matrix_cost(w, cfg).adds);
  return conv_addition_cost(lc, adds);
}

CompressionReport build_report(const PipelineConfig& cfg, const Model& baseline, const Model& pruned, const Model* shared,
                               const std::vector<LayerLcc>* lcc) {
  CompressionReport r;
  r.label = "pipeline";
  r.lambda = cfg.lambda(cfg.sweep_layer);
  const ConvMethod lowering = cfg.arch.lowering;
  bool any_lambda = false;
  for (double l : cfg.lambdas) any_lambda = any_lambda || l > 0.0;

  auto cols_of = [&](const Layer& l) {
    if (l.kind == LayerKind::Dense) return static_cast<int>(l.weight.cols());
    const auto gs = groups_for(l, lowering);
    return static_cast<int>(gs.group_count(l.weight)) - count_zero_groups(l.weight, gs);
  };
  auto stage = [&](const std::string& name, const Layer& l) {
    StageCost s;
    s.stage = name;
    s.rows = static_cast<int>(l.weight.rows());
    s.cols = cols_of(l);
    s.adds = layer_csd_adds(l, cfg.baseline, lowering, &s.pooling_adds);
    return s;
  };

  for (std::size_t i = 0; i < baseline.layers.size(); ++i) {
    LayerReport lr;
    lr.index = static_cast<int>(i);
    const Layer& b = baseline.layers[i];
    lr.kind = b.kind == LayerKind::Dense ? "dense" : "conv-" + to_string(lowering);
    lr.stages.push_back(stage("baseline", b));
    lr.baseline_adds = lr.stages.back().adds;
    lr.original_cols = lr.stages.back().cols;
    const Layer& p = pruned.layers[i];
    if (any_lambda) lr.stages.push_back(stage("pruned", p));
    lr.retained_cols = cols_of(p);
    lr.unique_cols = lr.retained_cols;
    const Layer* last = &p;
    if (shared) {
      last = &shared->layers[i];
      lr.stages.push_back(stage("shared", *last));
      lr.unique_cols = cols_of(*last);
    }
    if (lcc) {
      StageCost s = lr.stages.back();
      s.stage = "lcc";
      for (const auto& d : *lcc) {
        if (d.layer != lr.index) continue;
        s.pooling_adds = last->kind == LayerKind::Dense && last->pooled() ? pooling_adds(last->pools) : 0;
        s.adds = d.adds + s.pooling_adds;
        s.sqnr_db = d.sqnr_db;
      }
      lr.stages.push_back(s);
    }
    r.layers.push_back(std::move(lr));
  }
  r.finalize();
  return r;
}

namespace {

Ratio unpruned_lcc_ratio(const PipelineConfig& cfg, const Model& baseline) {
  std::int64_t lcc_adds = 0;
  std::int64_t base_adds = 0;
  for (const auto& d : decompose_model(baseline, cfg.lcc, cfg.baseline, cfg.arch.lowering)) {
    lcc_adds += d.adds;
    base_adds += layer_csd_adds(baseline.layers[static_cast<std::size_t>(d.layer)], cfg.baseline, cfg.arch.lowering, nullptr);
  }
  return compression_ratio(base_adds, lcc_adds);
}

template <class F>
auto run_stage(const std::string& name, const PipelineHooks& hooks, F&& f, bool announce = true) {
  if (announce && hooks.log) hooks.log("stage " + name);
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string provenance(const PipelineConfig& cfg, const std::string& stage) {
  std::ostringstream os;
  os << "stage=" << stage << " seed=" << cfg.seed << " lambdas=";
  for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) os << (i ? "," : "") << cfg.lambdas[i];
  os << " epochs=" << cfg.train.epochs;
  return os.str();
}

void save_stage(const PipelineConfig& cfg, const Model& m, const std::string& stage,
                const std::map<int, std::vector<std::vector<int>>>& clusters = {}) {
  if (!cfg.save_artifacts) return;
  Checkpoint c;
  c.model = m;
  c.stage = stage;
  c.seed = cfg.seed;
  c.provenance = provenance(cfg, stage);
  c.clusters = clusters;
  save_checkpoint(c, (fs::path(cfg.output_dir) / ("model_" + stage + ".lcm")).string());
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const Datasets& data, const PipelineHooks& hooks) {
  cfg.validate();
  PipelineResult res;
  if (cfg.save_artifacts) fs::create_directories(cfg.output_dir);
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };

  res.baseline = hooks.baseline ? *hooks.baseline
                                : run_stage("baseline", hooks, [&] { return train_baseline(cfg, data.train); });
  std::map<std::string, double> acc;
  acc["baseline"] = top1_accuracy(res.baseline, data.test);
  log("baseline accuracy " + std::to_string(acc["baseline"]));
  run_stage("baseline", hooks, [&] { save_stage(cfg, res.baseline, "baseline"); return 0; }, false);

  bool any_lambda = false;
  for (double l : cfg.lambdas) any_lambda = any_lambda || l > 0.0;
  if (any_lambda) {
    res.pruned = run_stage("prune", hooks, [&] {
      Model m = train_regularized(cfg, data.train);
      save_stage(cfg, m, "pruned");
      return m;
    });
    acc["pruned"] = top1_accuracy(res.pruned, data.test);
    log("pruned accuracy " + std::to_string(acc["pruned"]));
  } else {
    res.pruned = res.baseline;
  }

  if (cfg.sharing.enabled && !cfg.sharing.layers.empty()) {
    auto outcome = run_stage("share", hooks, [&] {
      auto o = share_and_retrain(cfg, res.pruned, data.train);
      save_stage(cfg, o.model, "shared", o.clusters);
      return o;
    });
    res.shared = std::move(outcome.model);
    acc["shared"] = top1_accuracy(*res.shared, data.test);
    log("shared accuracy " + std::to_string(acc["shared"]));
  }

  const Model& final_model = res.shared ? *res.shared : res.pruned;
  if (cfg.lcc.enabled) {
    res.lcc = run_stage("lcc", hooks, [&] {
      auto d = decompose_model(final_model, cfg.lcc, cfg.baseline, cfg.arch.lowering);
      if (cfg.save_artifacts) {
        for (const auto& layer : d) {
          for (std::size_t k = 0; k < layer.parts.size(); ++k) {
            std::string name = "lcc_layer" + std::to_string(layer.layer);
            if (layer.parts.size() > 1) name += "_map" + std::to_string(k);
            save_decomposition(layer.parts[k], (fs::path(cfg.output_dir) / (name + ".lccd")).string());
          }
        }
      }
      return d;
    });
    acc["lcc"] = run_stage("lcc", hooks, [&] { return program_accuracy(final_model, res.lcc, cfg.arch.lowering, data.test); }, false);
    log("lcc accuracy (adder programs) " + std::to_string(acc["lcc"]));
  }

  res.report = run_stage("report", hooks, [&] {
    CompressionReport r = build_report(cfg, res.baseline, res.pruned, res.shared ? &*res.shared : nullptr,
                                       cfg.lcc.enabled ? &res.lcc : nullptr);
    r.accuracy = acc;
    if (cfg.lcc.enabled && cfg.lcc.unpruned_reference)
      r.lcc_unpruned_ratio = hooks.lcc_unpruned ? *hooks.lcc_unpruned : unpruned_lcc_ratio(cfg, res.baseline);
    if (cfg.save_artifacts) emit_report(r, cfg.output_dir, "report");
    return r;
  });
  return res;
}

namespace {

std::string lambda_dir(double lambda) {
  const std::string stem = sweep_report_stem(lambda);
  return "lambda_" + stem.substr(std::string("report_lambda_").size());
}

}  // namespace

std::vector<PipelineResult> run_sweep(const PipelineConfig& cfg, const Datasets& data, const PipelineHooks& hooks) {
  cfg.validate();
  if (cfg.sweep_lambdas.empty()) throw ConfigError("sweep.lambdas is empty");
  PipelineHooks inner = hooks;
  Model baseline;
  if (!hooks.baseline) {
    baseline = run_stage("baseline", hooks, [&] { return train_baseline(cfg, data.train); });
    inner.baseline = &baseline;
  }
  const Model& base = inner.baseline ? *inner.baseline : baseline;
  std::optional<Ratio> reference;
  if (cfg.lcc.enabled && cfg.lcc.unpruned_reference) {
    reference = run_stage("lcc", hooks, [&] { return unpruned_lcc_ratio(cfg, base); });
    inner.lcc_unpruned = &*reference;
  }
  std::vector<PipelineResult> out;
  for (double lambda : cfg.sweep_lambdas) {
    PipelineConfig point = cfg;
    if (static_cast<int>(point.lambdas.size()) <= cfg.sweep_layer) point.lambdas.resize(static_cast<std::size_t>(cfg.sweep_layer) + 1, 0.0);
    point.lambdas[static_cast<std::size_t>(cfg.sweep_layer)] = lambda;
    point.output_dir = (fs::path(cfg.output_dir) / lambda_dir(lambda)).string();
    if (hooks.log) hooks.log("sweep point lambda=" + std::to_string(lambda));
    out.push_back(run_pipeline(point, data, inner));
    if (cfg.save_artifacts) emit_report(out.back().report, cfg.output_dir, sweep_report_stem(lambda));
  }
  return out;
}

}  // namespace lccnn
