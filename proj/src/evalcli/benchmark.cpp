#include "expfuse/evalcli/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <set>

#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"

#ifndef EXPFUSE_VERSION
#define EXPFUSE_VERSION "unknown"
#endif

namespace expfuse::evalcli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::optional<double> parse_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  return std::nullopt;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::map<std::string, std::vector<double>> by_metric(const std::vector<SceneRecord>& records) {
  std::map<std::string, std::vector<double>> out;
  for (const SceneRecord& r : records)
    for (const auto& [name, v] : r.metrics) out[name].push_back(v);
  return out;
}

bool same_value(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  if (!std::isfinite(a) || !std::isfinite(b)) return a == b;
  return std::abs(a - b) <= 1e-9;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError(IoErrc::kWriteFailed, path.string());
}

// One scene's inputs, or the reason it was skipped.
struct Scene {
  ImageRGB ue, oe;
  std::optional<ImageRGB> gt;
  std::optional<PrecomputedFlow> flows;
};

std::optional<Scene> load_scene(const fs::path& dir, std::string& why) {
  for (const char* name : {kSceneUe, kSceneOe})
    if (!fs::is_regular_file(dir / name)) {
      why = std::string("missing ") + name;
      return std::nullopt;
    }
  const bool fwd = fs::exists(dir / kSceneFlowFwd), bwd = fs::exists(dir / kSceneFlowBwd);
  if (fwd != bwd) {
    why = "only one of the two flow files is present";
    return std::nullopt;
  }
  try {
    Scene s{load_image(dir / kSceneUe), load_image(dir / kSceneOe), std::nullopt, std::nullopt};
    if (s.ue.height() != s.oe.height() || s.ue.width() != s.oe.width()) {
      why = "ue and oe sizes differ";
      return std::nullopt;
    }
    if (fs::exists(dir / kSceneGt)) {
      s.gt = load_image(dir / kSceneGt);
      if (s.gt->height() != s.oe.height() || s.gt->width() != s.oe.width()) {
        why = "gt size differs from oe";
        return std::nullopt;
      }
    }
    if (fwd) s.flows = PrecomputedFlow::from_files(dir / kSceneFlowFwd, dir / kSceneFlowBwd);
    return s;
  } catch (const IoError& e) {
    why = e.what();
  } catch (const ValidationError& e) {
    why = e.what();
  }
  return std::nullopt;
}

}  // namespace

json BenchmarkOptions::to_json() const {
  return {{"steps", steps},
          {"seed", seed},
          {"alpha1", consistency.alpha1},
          {"alpha2", consistency.alpha2},
          {"mef_window", mef.window},
          {"mef_stride", mef.stride},
          {"mef_c2", mef.c2},
          {"mef_max_exponent", mef.max_exponent}};
}

json EvalReport::to_json() const {
  json recs = json::array();
  for (const SceneRecord& r : records) {
    json m = json::object();
    for (const auto& [name, v] : r.metrics) m[name] = number(v);
    recs.push_back({{"scene", r.scene}, {"metrics", m}, {"runtime", r.runtime}});
  }
  json agg = json::object();
  for (const auto& [name, v] : aggregates) agg[name] = number(v);
  return {{"version", version}, {"config", config}, {"records", recs}, {"aggregates", agg}, {"warnings", warnings}};
}

EvalReport EvalReport::from_json(const json& j) {
  validate_report(j);
  EvalReport r;
  r.version = j.at("version").get<std::string>();
  r.config = j.at("config");
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const json& rec : j.at("records")) {
    SceneRecord s{rec.at("scene").get<std::string>(), {}, rec.at("runtime").get<double>()};
    for (const auto& [name, v] : rec.at("metrics").items()) s.metrics[name] = *parse_number(v);
    r.records.push_back(std::move(s));
  }
  for (const auto& [name, v] : j.at("aggregates").items()) r.aggregates[name] = *parse_number(v);
  return r;
}

void validate_report(const json& j) {
  auto fail = [](const std::string& msg) { throw ValidationError("report: " + msg); };
  if (!j.is_object()) fail("not a JSON object");
  for (const char* key : {"version", "config", "records", "aggregates", "warnings"})
    if (!j.contains(key)) fail(std::string("missing key '") + key + "'");
  if (!j["version"].is_string()) fail("version must be a string");
  if (!j["config"].is_object()) fail("config must be an object");
  if (!j["records"].is_array()) fail("records must be an array");
  if (!j["aggregates"].is_object()) fail("aggregates must be an object");
  if (!j["warnings"].is_array()) fail("warnings must be an array");
  for (const json& w : j["warnings"])
    if (!w.is_string()) fail("warnings must be strings");

  std::set<std::string> ids;
  std::map<std::string, std::vector<double>> values;
  for (const json& rec : j["records"]) {
    if (!rec.is_object() || !rec.contains("scene") || !rec.contains("metrics") || !rec.contains("runtime"))
      fail("record lacks scene, metrics or runtime");
    if (!rec["scene"].is_string() || rec["scene"].get<std::string>().empty()) fail("scene id must be a non-empty string");
    const std::string id = rec["scene"].get<std::string>();
    if (!ids.insert(id).second) fail("scene '" + id + "' appears more than once");
    if (!rec["runtime"].is_number() || rec["runtime"].get<double>() < 0.0) fail("runtime of '" + id + "' is invalid");
    if (!rec["metrics"].is_object()) fail("metrics of '" + id + "' must be an object");
    for (const auto& [name, v] : rec["metrics"].items()) {
      const auto x = parse_number(v);
      if (!x) fail("metric '" + name + "' of '" + id + "' is not a number");
      values[name].push_back(*x);
    }
  }
  for (const auto& [name, v] : j["aggregates"].items()) {
    if (!values.contains(name)) fail("aggregate '" + name + "' has no per-scene values");
    if (!parse_number(v)) fail("aggregate '" + name + "' is not a number");
  }
  for (const auto& [name, v] : values) {
    if (!j["aggregates"].contains(name)) fail("aggregate '" + name + "' is missing");
    const double agg = *parse_number(j["aggregates"][name]);
    if (!same_value(agg, mean_of(v))) fail("aggregate '" + name + "' differs from the per-scene mean");
  }
}

void compute_aggregates(EvalReport& report) {
  report.aggregates.clear();
  for (const auto& [name, v] : by_metric(report.records)) report.aggregates[name] = mean_of(v);
}

void write_report(const EvalReport& report, const fs::path& out_dir, bool plots) {
  const json j = report.to_json();
  validate_report(j);
  fs::create_directories(out_dir);
  write_text(out_dir / kReportName, j.dump(2) + "\n");
  std::string lines;
  for (const json& rec : j["records"]) lines += rec.dump() + "\n";
  write_text(out_dir / kRecordsName, lines);
  if (plots) write_plots(report, out_dir / "plots");
}

EvalReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::kFileNotFound, path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(IoErrc::kCorruptData, path.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

EvalReport run_benchmark(const fs::path& scenes_dir, const trainfuse::Bundle& bundle, const fs::path& out_dir,
                         const BenchmarkOptions& options) {
  require(fs::is_directory(scenes_dir), "benchmark: " + scenes_dir.string() + " is not a directory");
  require(options.steps >= 1, "benchmark: sampler steps must be >= 1");
  options.mef.validate();
  options.consistency.validate();

  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(scenes_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  EvalReport report;
  report.version = EXPFUSE_VERSION;
  report.config = options.to_json();
  report.config["model"] = bundle.config().to_json();

  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const std::string id = dirs[i].filename().string();
    std::string why;
    const std::optional<Scene> scene = load_scene(dirs[i], why);
    if (!scene) {
      report.warnings.push_back("scene '" + id + "' skipped: " + why);
      continue;
    }
    trainfuse::FusionRequest req;
    req.ue = scene->ue;
    req.oe = scene->oe;
    req.consistency = options.consistency;
    req.steps = options.steps;
    req.seed = datasynth::derive_rng(options.seed, i, 0xE7A1)();
    if (scene->flows) req.estimator = &*scene->flows;

    const auto start = std::chrono::steady_clock::now();
    trainfuse::FusionResult fused;
    try {
      fused = trainfuse::fuse(bundle, req);
    } catch (const ValidationError& e) {
      report.warnings.push_back("scene '" + id + "' skipped: " + e.what());
      continue;
    }
    SceneRecord rec{id, {}, 0.0};
    const ImageRGB stack[] = {scene->ue, scene->oe};
    rec.metrics["mef_ssim"] = mef_ssim(fused.image, stack, options.mef);
    if (scene->gt) {
      rec.metrics["psnr"] = psnr(fused.image, *scene->gt);
      rec.metrics["ssim"] = ssim(fused.image, *scene->gt);
    }
    rec.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.records.push_back(std::move(rec));

    if (options.diagnostics) {
      const fs::path d = out_dir / "diagnostics" / id;
      fs::create_directories(d);
      save_image(fused.image, d / "fused.png");
      save_image(fused.stage1.guidance, d / "guidance.png");
      save_mask(fused.stage1.mask, d / "mask.png");
    }
  }
  compute_aggregates(report);
  write_report(report, out_dir, options.plots);
  return report;
}

void write_procedural_benchmark(const fs::path& dir, std::uint64_t seed, const ProceduralBenchmark& params) {
  require(params.count >= 0, "benchmark generator: count must be >= 0");
  require(params.size >= 16 && params.size % 4 == 0, "benchmark generator: size must be a multiple of 4, >= 16");
  require(params.min_gap >= 1.0 && params.max_gap <= 9.0 && params.min_gap <= params.max_gap,
          "benchmark generator: gaps must satisfy 1 <= min <= max <= 9");
  datasynth::SceneParams sp;
  sp.height = sp.width = params.size;
  for (int i = 0; i < params.count; ++i) {
    std::mt19937_64 rng = datasynth::derive_rng(seed, static_cast<std::uint64_t>(i), 0xBE7C);
    const double gap = std::uniform_real_distribution<double>(params.min_gap, params.max_gap)(rng);
    const datasynth::ExposureTriplet t = datasynth::procedural_triplet(rng(), gap, sp);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    const fs::path d = dir / name;
    fs::create_directories(d);
    save_image(t.ue, d / kSceneUe, BitDepth::k16);
    save_image(t.oe, d / kSceneOe, BitDepth::k16);
    save_image(t.gt, d / kSceneGt, BitDepth::k16);
  }
}

}  // namespace expfuse::evalcli
