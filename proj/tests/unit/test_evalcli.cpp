#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "expfuse/evalcli/benchmark.hpp"
#include "expfuse/evalcli/config.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"

using namespace expfuse;
using namespace expfuse::evalcli;
namespace fs = std::filesystem;

namespace {

ImageRGB textured(int h, int w, std::uint64_t seed, float lo = 0.05f, float hi = 0.9f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  ImageRGB img(h, w);
  for (float& v : img.data()) v = u(rng);
  return img;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("expfuse_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// All four stages run for a single step: enough for contracts, not quality.
const trainfuse::Bundle& tiny_bundle() {
  static const trainfuse::Bundle b = [] {
    trainfuse::ModelConfig m;
    m.unet.base = 8;
    m.vae.widths = {8, 8, 16};
    trainfuse::Bundle out(m);
    datasynth::DatasetConfig dc;
    dc.patch = 32;
    dc.scene.height = dc.scene.width = 48;
    dc.clip.height = dc.clip.width = 32;
    dc.mask_pool = 2;
    const auto data = datasynth::synthesize(4, 3, dc);
    for (auto c : {trainfuse::Component::kVae, trainfuse::Component::kBackbone, trainfuse::Component::kDfcb,
                   trainfuse::Component::kFcb}) {
      trainfuse::TrainConfig tc;
      tc.component = c;
      tc.iterations = 1;
      tc.batch = 2;
      trainfuse::train(out, data, tc);
    }
    return out;
  }();
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json without_runtime(nlohmann::json j) {
  for (auto& r : j["records"]) r.erase("runtime");
  return j;
}

}  // namespace

TEST_CASE("mef_ssim: identity, flat fused image and offset invariance") {
  const ImageRGB x = textured(40, 48, 1);
  const ImageRGB single[] = {x};
  CHECK(mef_ssim(x, single) == doctest::Approx(1.0).epsilon(1e-9));

  const ImageRGB flat(40, 48, 0.5f);
  CHECK(mef_ssim(flat, single) < 0.5);

  const ImageRGB dark = textured(40, 48, 2, 0.0f, 0.3f);
  const ImageRGB stack[] = {dark, x};
  ImageRGB shifted = x;
  for (float& v : shifted.data()) v += 0.05f;
  CHECK(std::abs(mef_ssim(shifted, stack) - mef_ssim(x, stack)) < 1e-6);

  // Each input alone scores at most 1; the flat image scores worst.
  const double s_x = mef_ssim(x, stack), s_flat = mef_ssim(flat, stack);
  CHECK(s_x <= 1.0 + 1e-12);
  CHECK(s_flat < s_x);
}

TEST_CASE("mef_ssim: desired contrast is the largest input contrast") {
  // Two inputs with identical structure and different contrast: the fused
  // image with the larger contrast matches the desired patch exactly.
  ImageRGB lo(16, 16), hi(16, 16);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const float d = u(rng);
      for (int c = 0; c < 3; ++c) {
        lo(y, x, c) = 0.5f + 0.05f * d;
        hi(y, x, c) = 0.4f + 0.2f * d;
      }
    }
  const ImageRGB stack[] = {lo, hi};
  CHECK(mef_ssim(hi, stack) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mef_ssim(lo, stack) < 0.9);
}

TEST_CASE("mef_ssim: argument errors") {
  const ImageRGB x = textured(16, 16, 1);
  CHECK_THROWS_AS(mef_ssim(x, std::span<const ImageRGB>{}), ValidationError);
  const ImageRGB other[] = {textured(16, 20, 2)};
  CHECK_THROWS_AS(mef_ssim(x, other), ValidationError);
  const ImageRGB tiny[] = {ImageRGB(4, 4)};
  CHECK_THROWS_AS(mef_ssim(ImageRGB(4, 4), tiny), ValidationError);
  MefSsimParams bad;
  bad.stride = 0;
  const ImageRGB same[] = {x};
  CHECK_THROWS_AS(mef_ssim(x, same, bad), ValidationError);
}

TEST_CASE("psnr and ssim reference values") {
  const ImageRGB x = textured(32, 32, 3, 0.0f, 0.85f);
  CHECK(std::isinf(psnr(x, x)));
  ImageRGB y = x;
  for (float& v : y.data()) v += 0.1f;
  CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  ImageRGB noisy = x;
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (float& v : noisy.data()) v += n(rng);
  CHECK(ssim(x, noisy) < 0.99);
  CHECK_THROWS_AS(psnr(x, ImageRGB(32, 31)), ValidationError);
  CHECK_THROWS_AS(ssim(ImageRGB(8, 8), ImageRGB(8, 8)), ValidationError);
}

TEST_CASE("key-value config") {
  const KeyValueConfig c = KeyValueConfig::parse("# comment\nlr = 0.5\n steps=7 # trailing\nwidths = 8, 16\nflag = true\n");
  CHECK(c.get_double("lr", 0) == 0.5);
  CHECK(c.get_int("steps", 0) == 7);
  CHECK(c.get_ints("widths", {}) == std::vector<int>{8, 16});
  CHECK(c.get_bool("flag", false));
  CHECK(c.get_int("absent", 3) == 3);
  CHECK_NOTHROW(c.require_all_used());

  const KeyValueConfig typo = KeyValueConfig::parse("lrr = 1\n");
  typo.get_double("lr", 0);
  CHECK_THROWS_AS(typo.require_all_used(), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign\n"), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::parse("n = 1.5\n").get_int("n", 0), ValidationError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/expfuse.cfg"), IoError);
}

TEST_CASE("report schema and aggregates") {
  EvalReport r;
  r.version = "test";
  r.config = nlohmann::json::object();
  r.records = {{"a", {{"mef_ssim", 0.5}, {"psnr", 20.0}}, 0.1},
               {"b", {{"mef_ssim", 0.7}, {"psnr", std::numeric_limits<double>::infinity()}}, 0.2},
               {"c", {{"mef_ssim", 0.9}}, 0.3}};
  compute_aggregates(r);
  CHECK(r.aggregates.at("mef_ssim") == doctest::Approx(0.7));
  CHECK(std::isinf(r.aggregates.at("psnr")));

  const nlohmann::json j = r.to_json();
  CHECK_NOTHROW(validate_report(j));
  CHECK(j["records"][1]["metrics"]["psnr"] == "inf");
  const EvalReport back = EvalReport::from_json(j);
  CHECK(back.records.size() == 3);
  CHECK(std::isinf(back.records[1].metrics.at("psnr")));

  nlohmann::json bad = j;
  bad["aggregates"]["mef_ssim"] = 0.7 + 1e-6;
  CHECK_THROWS_AS(validate_report(bad), ValidationError);
  bad = j;
  bad["records"][2]["scene"] = "a";
  CHECK_THROWS_AS(validate_report(bad), ValidationError);
  bad = j;
  bad.erase("warnings");
  CHECK_THROWS_AS(validate_report(bad), ValidationError);
  bad = j;
  bad["records"][0]["metrics"]["psnr"] = "big";
  CHECK_THROWS_AS(validate_report(bad), ValidationError);
  bad = j;
  bad["aggregates"]["ssim"] = 1.0;
  CHECK_THROWS_AS(validate_report(bad), ValidationError);
}

TEST_CASE("benchmark: empty directory") {
  const fs::path scenes = scratch("empty_scenes"), out = scratch("empty_out");
  const EvalReport r = run_benchmark(scenes, tiny_bundle(), out);
  CHECK(r.records.empty());
  CHECK(r.warnings.empty());
  CHECK(fs::exists(out / kReportName));
  CHECK_NOTHROW(read_report(out / kReportName));
  CHECK_THROWS_AS(run_benchmark(scenes / "missing", tiny_bundle(), out), ValidationError);
}

TEST_CASE("benchmark: procedural scenes, isolation of broken scenes, reproducibility") {
  const fs::path scenes = scratch("scenes"), out_a = scratch("out_a"), out_b = scratch("out_b");
  ProceduralBenchmark pb;
  pb.count = 4;
  pb.size = 32;
  write_procedural_benchmark(scenes, 17, pb);
  fs::remove(scenes / "scene_002" / kSceneOe);
  fs::create_directories(scenes / "scene_odd");
  save_image(textured(30, 30, 1), scenes / "scene_odd" / kSceneUe);
  save_image(textured(30, 30, 2), scenes / "scene_odd" / kSceneOe);

  BenchmarkOptions opt;
  opt.steps = 3;
  opt.seed = 4;
  const EvalReport a = run_benchmark(scenes, tiny_bundle(), out_a, opt);
  REQUIRE(a.records.size() == 3);
  CHECK(a.records[0].scene == "scene_000");
  CHECK(a.records[2].scene == "scene_003");
  REQUIRE(a.warnings.size() == 2);
  CHECK(a.warnings[0].find("scene_002") != std::string::npos);
  CHECK(a.warnings[0].find("oe.png") != std::string::npos);
  CHECK(a.warnings[1].find("scene_odd") != std::string::npos);
  for (const SceneRecord& r : a.records) {
    CHECK(r.metrics.contains("mef_ssim"));
    CHECK(r.metrics.contains("psnr"));
    CHECK(r.metrics.contains("ssim"));
    CHECK(fs::exists(out_a / "diagnostics" / r.scene / "fused.png"));
    CHECK(fs::exists(out_a / "diagnostics" / r.scene / "mask.png"));
  }
  CHECK(fs::exists(out_a / "plots" / "hist_mef_ssim.svg"));
  CHECK(fs::exists(out_a / "plots" / "scenes_psnr.svg"));
  CHECK(fs::exists(out_a / kRecordsName));

  run_benchmark(scenes, tiny_bundle(), out_b, opt);
  const auto ja = nlohmann::json::parse(slurp(out_a / kReportName));
  const auto jb = nlohmann::json::parse(slurp(out_b / kReportName));
  CHECK_NOTHROW(validate_report(ja));
  CHECK(without_runtime(ja).dump() == without_runtime(jb).dump());
  CHECK(slurp(out_a / "diagnostics" / "scene_000" / "fused.png") ==
        slurp(out_b / "diagnostics" / "scene_000" / "fused.png"));

  // A scene with flows on disk uses them; one file alone is a broken scene.
  save_flow(FlowField(32, 32), scenes / "scene_000" / kSceneFlowFwd);
  const EvalReport c = run_benchmark(scenes, tiny_bundle(), scratch("out_c"), opt);
  CHECK(c.records.size() == 2);
  CHECK(c.warnings.size() == 3);
}

#ifdef EXPFUSE_CLI
TEST_CASE("command line: exit codes and a synth/prealign/report round trip") {
  const std::string cli = EXPFUSE_CLI;
  const fs::path dir = scratch("cli");
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("train --component unet --data " + dir.string()) == 1);

  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "patchh = 32\n";
  }
  CHECK(run("--config " + (dir / "bad.cfg").string() + " --out " + (dir / "x").string() + " synth-data --count 1") == 1);

  const fs::path scenes = dir / "scenes";
  CHECK(run("--seed 3 --out " + scenes.string() + " synth-data --benchmark --count 2 --size 32") == 0);
  CHECK(fs::exists(scenes / "scene_001" / kSceneGt));

  const std::string s0 = (scenes / "scene_000").string();
  CHECK(run("--out " + (dir / "pre").string() + " prealign --ue " + s0 + "/ue.png --oe " + s0 + "/oe.png") == 0);
  CHECK(fs::exists(dir / "pre" / "mask.png"));
  CHECK(fs::exists(dir / "pre" / kSceneFlowBwd));

  // A checkpoint lacking the trained stages is a runtime failure.
  trainfuse::Bundle().save(dir / "empty.ckpt");
  CHECK(run("--out " + (dir / "f").string() + " fuse --ckpt " + (dir / "empty.ckpt").string() + " --ue " + s0 +
            "/ue.png --oe " + s0 + "/oe.png") == 2);

  tiny_bundle().save(dir / "tiny.ckpt");
  CHECK(run("--out " + (dir / "eval").string() + " eval --ckpt " + (dir / "tiny.ckpt").string() + " --scenes " +
            scenes.string() + " --steps 2") == 0);
  CHECK(run("--out " + (dir / "rep").string() + " report --input " + (dir / "eval" / kReportName).string()) == 0);
  CHECK(fs::exists(dir / "rep" / "plots" / "hist_mef_ssim.svg"));

  {
    std::ofstream broken(dir / "broken.json");
    broken << "{\"records\": []}";
  }
  CHECK(run("report --input " + (dir / "broken.json").string()) == 1);
}
#endif
