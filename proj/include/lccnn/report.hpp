#pragma once

// Compression report: per-layer addition counts at every stage, accuracies
// and the resulting ratios, written as JSON and CSV.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lccnn {

/// Additions of one layer after one stage.
struct StageCost {
  std::string stage;  // baseline | pruned | shared | lcc
  int rows = 0;
  int cols = 0;  // columns (dense) or retained groups (conv) actually multiplied
  std::int64_t adds = 0;
  std::int64_t pooling_adds = 0;  // included in adds
  std::optional<double> sqnr_db;  // lcc only
};

struct LayerReport {
  int index = 0;
  std::string kind;  // dense | conv-fk | conv-pk
  std::int64_t baseline_adds = 0;
  int original_cols = 0;
  int retained_cols = 0;
  int unique_cols = 0;
  std::vector<StageCost> stages;

  /// Additions after the last stage that ran.
  std::int64_t final_adds() const;
  double ratio() const;
};

struct Ratio {
  double value = 1.0;
  bool infinite = false;  // compressed count was zero
};

/// baseline / compressed; +inf with the flag set when compressed == 0.
Ratio compression_ratio(std::int64_t baseline, std::int64_t compressed);

struct CompressionReport {
  std::string label;
  std::optional<double> lambda;
  std::vector<LayerReport> layers;
  std::map<std::string, double> accuracy;  // per stage
  std::int64_t total_baseline_adds = 0;
  std::int64_t total_compressed_adds = 0;
  Ratio total_ratio;
  /// LCC applied directly to the unpruned baseline matrices, when requested.
  std::optional<Ratio> lcc_unpruned_ratio;

  /// Recomputes the totals and ratio from the layer entries.
  void finalize();
  /// True when stored totals equal the ones recomputed from the layers.
  bool consistent() const;
};

std::string report_to_json(const CompressionReport& r);
CompressionReport report_from_json(const std::string& text);
/// Header plus one row per (layer, stage).
std::string report_to_csv(const CompressionReport& r);

/// "report_lambda_<value>" with the value in shortest round-trip form.
std::string sweep_report_stem(double lambda);
/// Writes <dir>/<stem>.json and <dir>/<stem>.csv for the selected formats.
void emit_report(const CompressionReport& r, const std::string& dir, const std::string& stem, bool json = true,
                 bool csv = true);

}  // namespace lccnn
