#include "lccnn/report.hpp"

#include "lccnn/types.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lccnn {

using nlohmann::json;

std::int64_t LayerReport::final_adds() const { return stages.empty() ? baseline_adds : stages.back().adds; }

double LayerReport::ratio() const { return compression_ratio(baseline_adds, final_adds()).value; }

Ratio compression_ratio(std::int64_t baseline, std::int64_t compressed) {
  if (baseline < 0 || compressed < 0) throw Error("compression_ratio: negative addition count");
  if (compressed == 0) return {std::numeric_limits<double>::infinity(), true};
  return {static_cast<double>(baseline) / static_cast<double>(compressed), false};
}

void CompressionReport::finalize() {
  total_baseline_adds = 0;
  total_compressed_adds = 0;
  for (const auto& l : layers) {
    total_baseline_adds += l.baseline_adds;
    total_compressed_adds += l.final_adds();
  }
  total_ratio = compression_ratio(total_baseline_adds, total_compressed_adds);
}

bool CompressionReport::consistent() const {
  CompressionReport copy = *this;
  copy.finalize();
  return copy.total_baseline_adds == total_baseline_adds && copy.total_compressed_adds == total_compressed_adds &&
         copy.total_ratio.infinite == total_ratio.infinite &&
         (total_ratio.infinite || copy.total_ratio.value == total_ratio.value);
}

namespace {

json ratio_json(const Ratio& r) {
  return json{{"value", r.infinite ? json(nullptr) : json(r.value)}, {"infinite", r.infinite}};
}

Ratio ratio_from(const json& j) {
  Ratio r;
  r.infinite = j.at("infinite").get<bool>();
  r.value = r.infinite ? std::numeric_limits<double>::infinity() : j.at("value").get<double>();
  return r;
}

json sqnr_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return "inf";
  return *v;
}

std::optional<double> sqnr_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (j.is_string()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string report_to_json(const CompressionReport& r) {
  json j;
  j["label"] = r.label;
  j["lambda"] = r.lambda ? json(*r.lambda) : json(nullptr);
  j["accuracy"] = r.accuracy;
  json layers = json::array();
  for (const auto& l : r.layers) {
    json lj{{"index", l.index},
            {"kind", l.kind},
            {"baseline_adds", l.baseline_adds},
            {"original_cols", l.original_cols},
            {"retained_cols", l.retained_cols},
            {"unique_cols", l.unique_cols},
            {"ratio", ratio_json(compression_ratio(l.baseline_adds, l.final_adds()))}};
    json stages = json::array();
    for (const auto& s : l.stages) {
      stages.push_back({{"stage", s.stage},
                        {"rows", s.rows},
                        {"cols", s.cols},
                        {"adds", s.adds},
                        {"pooling_adds", s.pooling_adds},
                        {"sqnr_db", sqnr_json(s.sqnr_db)}});
    }
    lj["stages"] = stages;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  j["totals"] = {{"baseline_adds", r.total_baseline_adds},
                 {"compressed_adds", r.total_compressed_adds},
                 {"ratio", ratio_json(r.total_ratio)}};
  j["lcc_unpruned_ratio"] = r.lcc_unpruned_ratio ? ratio_json(*r.lcc_unpruned_ratio) : json(nullptr);
  return j.dump(2) + "\n";
}

CompressionReport report_from_json(const std::string& text) {
  CompressionReport r;
  try {
    const json j = json::parse(text);
    r.label = j.at("label").get<std::string>();
    if (!j.at("lambda").is_null()) r.lambda = j.at("lambda").get<double>();
    r.accuracy = j.at("accuracy").get<std::map<std::string, double>>();
    for (const auto& lj : j.at("layers")) {
      LayerReport l;
      l.index = lj.at("index").get<int>();
      l.kind = lj.at("kind").get<std::string>();
      l.baseline_adds = lj.at("baseline_adds").get<std::int64_t>();
      l.original_cols = lj.at("original_cols").get<int>();
      l.retained_cols = lj.at("retained_cols").get<int>();
      l.unique_cols = lj.at("unique_cols").get<int>();
      for (const auto& sj : lj.at("stages")) {
        StageCost s;
        s.stage = sj.at("stage").get<std::string>();
        s.rows = sj.at("rows").get<int>();
        s.cols = sj.at("cols").get<int>();
        s.adds = sj.at("adds").get<std::int64_t>();
        s.pooling_adds = sj.at("pooling_adds").get<std::int64_t>();
        s.sqnr_db = sqnr_from(sj.at("sqnr_db"));
        l.stages.push_back(s);
      }
      r.layers.push_back(l);
    }
    const auto& t = j.at("totals");
    r.total_baseline_adds = t.at("baseline_adds").get<std::int64_t>();
    r.total_compressed_adds = t.at("compressed_adds").get<std::int64_t>();
    r.total_ratio = ratio_from(t.at("ratio"));
    if (!j.at("lcc_unpruned_ratio").is_null()) r.lcc_unpruned_ratio = ratio_from(j.at("lcc_unpruned_ratio"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const CompressionReport& r) {
  std::ostringstream os;
  os << "layer,kind,stage,rows,cols,adds,pooling_adds,sqnr_db,ratio,accuracy\n";
  for (const auto& l : r.layers) {
    for (const auto& s : l.stages) {
      const auto ratio = compression_ratio(l.baseline_adds, s.adds);
      const auto acc = r.accuracy.find(s.stage);
      os << l.index << ',' << l.kind << ',' << s.stage << ',' << s.rows << ',' << s.cols << ',' << s.adds << ','
         << s.pooling_adds << ',' << (s.sqnr_db ? fmt_double(*s.sqnr_db) : "") << ',' << fmt_double(ratio.value) << ','
         << (acc != r.accuracy.end() ? fmt_double(acc->second) : "") << '\n';
    }
  }
  return os.str();
}

std::string sweep_report_stem(double lambda) { return "report_lambda_" + fmt_double(lambda); }

void emit_report(const CompressionReport& r, const std::string& dir, const std::string& stem, bool json_out, bool csv_out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    f << body;
    if (!f) throw Error("could not write report '" + (fs::path(dir) / name).string() + "'");
  };
  if (json_out) write(stem + ".json", report_to_json(r));
  if (csv_out) write(stem + ".csv", report_to_csv(r));
}

}  // namespace lccnn
