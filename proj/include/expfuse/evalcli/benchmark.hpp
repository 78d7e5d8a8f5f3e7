#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "expfuse/evalcli/metrics.hpp"
#include "expfuse/trainfuse/trainfuse.hpp"
#include "json.hpp"

namespace expfuse::evalcli {

inline constexpr const char* kReportName = "report.json";
inline constexpr const char* kRecordsName = "records.jsonl";

// Scene folder layout read by the benchmark.
inline constexpr const char* kSceneUe = "ue.png";
inline constexpr const char* kSceneOe = "oe.png";
inline constexpr const char* kSceneGt = "gt.png";
inline constexpr const char* kSceneFlowFwd = "flow_oe_to_ue.flo";
inline constexpr const char* kSceneFlowBwd = "flow_ue_to_oe.flo";

struct SceneRecord {
  std::string scene;
  std::map<std::string, double> metrics;  // psnr may be +inf
  double runtime = 0.0;                   // seconds, excluded from reproducibility
};

struct EvalReport {
  std::vector<SceneRecord> records;
  std::map<std::string, double> aggregates;  // per-metric mean over the scenes reporting it
  std::vector<std::string> warnings;
  nlohmann::json config;
  std::string version;

  // Non-finite numbers are written as the strings "inf", "-inf", "nan".
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Throws ValidationError naming the first violation: required keys and types,
// unique scene ids, aggregates equal to per-scene means within 1e-9.
void validate_report(const nlohmann::json& j);

// Recomputes aggregates from the records.
void compute_aggregates(EvalReport& report);

struct BenchmarkOptions {
  int steps = 50;
  std::uint64_t seed = 0;  // per-scene sampler seeds derive from this and the scene index
  ConsistencyParams consistency;
  MefSsimParams mef;
  bool diagnostics = true;  // fused, guidance and mask PNGs per scene
  bool plots = true;

  nlohmann::json to_json() const;
};

// Fuses every scene folder under `scenes_dir` (sorted by name) and scores it.
// Folders that cannot be read are skipped with a warning. Writes report.json,
// records.jsonl, diagnostics/<scene>/ and plots/ under `out_dir`.
EvalReport run_benchmark(const std::filesystem::path& scenes_dir, const trainfuse::Bundle& bundle,
                         const std::filesystem::path& out_dir, const BenchmarkOptions& options = {});

// Writes the report files and plots for an existing report.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir, bool plots = true);
EvalReport read_report(const std::filesystem::path& path);

// Static procedural scenes (ue, oe, gt as 16-bit PNG) for the benchmark.
struct ProceduralBenchmark {
  int count = 5;
  int size = 64;
  double min_gap = 5.0;
  double max_gap = 9.0;
};
void write_procedural_benchmark(const std::filesystem::path& dir, std::uint64_t seed,
                                const ProceduralBenchmark& params = {});

// SVG plots: a histogram per metric and per-scene bars.
void write_plots(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace expfuse::evalcli
