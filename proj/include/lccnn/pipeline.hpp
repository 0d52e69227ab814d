#pragma once

// End-to-end compression: regularized training, column pruning, weight
// sharing with retraining, LCC decomposition and the resulting report.

#include "lccnn/adder_program.hpp"
#include "lccnn/checkpoint.hpp"
#include "lccnn/convlower.hpp"
#include "lccnn/lcc.hpp"
#include "lccnn/nncore.hpp"
#include "lccnn/report.hpp"
#include "lccnn/sharing.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lccnn {

/// A stage failed; the message names the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ArchitectureConfig {
  std::string type = "mlp";  // mlp | conv
  std::vector<int> sizes{784, 300, 10};
  // conv: one conv layer on the image followed by dense layers sizes[1..]
  ConvShape conv{1, 4, 5, 28};
  ConvMethod lowering = ConvMethod::FK;
};

enum class SqnrPolicy : std::uint8_t { MatchBaseline, FixedDb, FixedFactors };

std::string to_string(SqnrPolicy p);
SqnrPolicy parse_policy(const std::string& s);

struct LccConfig {
  bool enabled = true;
  LccAlgorithm algorithm = LccAlgorithm::FS;
  int terms_per_row = 2;
  int slice_width = 0;  // 0: floor(log2 rows)
  SqnrPolicy policy = SqnrPolicy::MatchBaseline;
  double target_db = 40.0;
  int factors = 3;
  std::int64_t max_additions = 1'000'000;
  std::vector<int> layers;  // empty: every layer
  bool unpruned_reference = false;  // also decompose the baseline matrices
};

struct SharingConfig {
  bool enabled = true;
  std::vector<int> layers{0};
  int retrain_epochs = 20;
  double damping = 0.5;
  int max_iter = 200;
  int convergence_iter = 15;
  std::optional<double> preference;
  bool normalize = false;
};

struct DataConfig {
  std::string root;  // empty: $LCCNN_DATA
  int train_limit = 10000;
  int test_limit = 0;  // 0: all
};

struct PipelineConfig {
  ArchitectureConfig arch;
  TrainConfig train;
  std::vector<double> lambdas{0.0};  // per layer, missing entries are 0
  SharingConfig sharing;
  LccConfig lcc;
  FixedPointConfig baseline;
  DataConfig data;
  std::string output_dir = "lccnn_out";
  std::uint64_t seed = 1;
  std::vector<double> sweep_lambdas;
  int sweep_layer = 0;
  bool save_artifacts = true;

  double lambda(int layer) const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::string& path);

struct Datasets {
  Dataset train;
  Dataset test;
};
Datasets load_datasets(const DataConfig& cfg);

Model build_model(const PipelineConfig& cfg);

/// Plain training, then float32 rounding.
Model train_baseline(const PipelineConfig& cfg, const Dataset& train);
/// Proximal training with the per-layer lambdas, then compaction of zero
/// input columns on dense layers.
Model train_regularized(const PipelineConfig& cfg, const Dataset& train);
/// Number of exactly-zero groups per layer (columns for dense, FK/PK groups for conv).
std::vector<int> zero_groups(const Model& m, ConvMethod lowering);

struct ShareOutcome {
  Model model;
  std::map<int, std::vector<std::vector<int>>> clusters;
};
/// Clusters, ties and retrains the configured dense layers.
ShareOutcome share_and_retrain(const PipelineConfig& cfg, const Model& pruned, const Dataset& train);

/// LCC artifacts of one layer: one decomposition per matrix (dense: the
/// weight; conv: W_k per input map).
struct LayerLcc {
  int layer = 0;
  std::vector<LccDecomposition> parts;
  std::vector<AdderProgram> programs;
  std::int64_t adds = 0;  // whole-layer count including conv accumulation
  double sqnr_db = kInfDb;
};

LccDecomposition decompose_matrix(const Matrix& w, const LccConfig& cfg, const FixedPointConfig& baseline);
LayerLcc decompose_layer(const Model& m, int layer, const LccConfig& cfg, const FixedPointConfig& baseline,
                         ConvMethod lowering);
std::vector<LayerLcc> decompose_model(const Model& m, const LccConfig& cfg, const FixedPointConfig& baseline,
                                      ConvMethod lowering);

/// Logits computed by executing the adder programs (layers without a
/// decomposition use the dense weights).
Vector program_forward(const Model& m, const std::vector<LayerLcc>& lcc, ConvMethod lowering, const Vector& x);
double program_accuracy(const Model& m, const std::vector<LayerLcc>& lcc, ConvMethod lowering, const Dataset& data);

/// CSD additions of a layer as deployed: dense uses the pooled weight plus
/// pooling adds; conv uses the lowered matrices.
std::int64_t layer_csd_adds(const Layer& l, const FixedPointConfig& cfg, ConvMethod lowering,
                            std::int64_t* pooling = nullptr);

struct PipelineResult {
  CompressionReport report;
  Model baseline;
  Model pruned;
  std::optional<Model> shared;
  std::vector<LayerLcc> lcc;
};

struct PipelineHooks {
  std::function<void(const std::string&)> log;
  /// Reuse an already trained baseline (sweeps train it once).
  const Model* baseline = nullptr;
  /// Precomputed ratio of LCC on the unpruned baseline.
  const Ratio* lcc_unpruned = nullptr;
};

/// Runs every enabled stage in order. Stage failures are rethrown as
/// StageError; artifacts written before the failure stay on disk.
PipelineResult run_pipeline(const PipelineConfig& cfg, const Datasets& data, const PipelineHooks& hooks = {});

/// One pipeline per sweep lambda on cfg.sweep_layer, each in
/// <output_dir>/lambda_<value>, reports named by sweep_report_stem.
std::vector<PipelineResult> run_sweep(const PipelineConfig& cfg, const Datasets& data, const PipelineHooks& hooks = {});

/// Report of a compressed model against its baseline; lcc may be empty.
CompressionReport build_report(const PipelineConfig& cfg, const Model& baseline, const Model& pruned,
                               const Model* shared, const std::vector<LayerLcc>* lcc);

}  // namespace lccnn
