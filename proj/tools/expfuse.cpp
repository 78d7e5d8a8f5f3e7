// expfuse: data synthesis, staged training, pre-alignment, fusion and evaluation.
// Exit codes: 0 success, 1 invalid input, 2 runtime or numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "expfuse/evalcli/benchmark.hpp"
#include "expfuse/evalcli/config.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"

using namespace expfuse;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  evalcli::KeyValueConfig cfg;

  std::uint64_t resolved_seed() const { return seed ? *seed : cfg.get_u64("seed", 0); }
};

ConsistencyParams consistency_from(const evalcli::KeyValueConfig& cfg) {
  ConsistencyParams p;
  p.alpha1 = cfg.get_double("alpha1", p.alpha1);
  p.alpha2 = cfg.get_double("alpha2", p.alpha2);
  p.validate();
  return p;
}

trainfuse::ModelConfig model_from(const evalcli::KeyValueConfig& cfg) {
  trainfuse::ModelConfig m;
  m.unet.base = cfg.get_int("unet_base", m.unet.base);
  m.unet.mult = cfg.get_ints("unet_mult", m.unet.mult);
  m.unet.attention.assign(m.unet.mult.size(), false);
  m.unet.attention.back() = cfg.get_bool("unet_attention", true);
  m.unet.seed = cfg.get_u64("unet_seed", m.unet.seed);
  m.vae.widths = cfg.get_ints("vae_widths", m.vae.widths);
  m.vae.seed = cfg.get_u64("vae_seed", m.vae.seed);
  m.dfcb_seed = cfg.get_u64("dfcb_seed", m.dfcb_seed);
  m.fcb_seed = cfg.get_u64("fcb_seed", m.fcb_seed);
  m.unet.validate();
  m.vae.validate();
  return m;
}

std::optional<PrecomputedFlow> flows_from(const std::string& fwd, const std::string& bwd) {
  require(fwd.empty() == bwd.empty(), "--flow-fwd and --flow-bwd must be given together");
  if (fwd.empty()) return std::nullopt;
  return PrecomputedFlow::from_files(fwd, bwd);
}

void save_stage1(const PreAlignResult& r, const fs::path& out) {
  save_image(r.guidance, out / "guidance.png", BitDepth::k16);
  save_mask(r.mask, out / "mask.png");
  save_flow(r.flow_fwd, out / evalcli::kSceneFlowFwd);
  save_flow(r.flow_bwd, out / evalcli::kSceneFlowBwd);
}

int run_synth(const Globals& g, int count, bool benchmark, int size) {
  const fs::path out(g.out);
  const std::uint64_t seed = g.resolved_seed();
  if (benchmark) {
    evalcli::ProceduralBenchmark p;
    p.count = count;
    p.size = size > 0 ? size : g.cfg.get_int("scene_size", p.size);
    p.min_gap = g.cfg.get_double("min_gap", p.min_gap);
    p.max_gap = g.cfg.get_double("max_gap", p.max_gap);
    g.cfg.require_all_used();
    evalcli::write_procedural_benchmark(out, seed, p);
    std::printf("wrote %d benchmark scenes to %s\n", count, out.c_str());
    return 0;
  }
  datasynth::DatasetConfig dc;
  dc.patch = size > 0 ? size : g.cfg.get_int("patch", dc.patch);
  dc.scene.height = dc.scene.width = g.cfg.get_int("scene_size", dc.scene.height);
  dc.clip.height = dc.clip.width = g.cfg.get_int("clip_size", dc.clip.height);
  dc.consistency = consistency_from(g.cfg);
  dc.min_gap = g.cfg.get_double("min_gap", dc.min_gap);
  dc.max_gap = g.cfg.get_double("max_gap", dc.max_gap);
  dc.mask_pool = g.cfg.get_int("mask_pool", dc.mask_pool);
  dc.empty_mask_prob = g.cfg.get_double("empty_mask_prob", dc.empty_mask_prob);
  dc.masks_per_pair = g.cfg.get_int("masks_per_pair", dc.masks_per_pair);
  if (g.cfg.has("external_scenes")) dc.external_scenes = g.cfg.get_string("external_scenes", "");
  if (g.cfg.has("external_clips")) dc.external_clips = g.cfg.get_string("external_clips", "");
  g.cfg.require_all_used();
  const datasynth::Manifest m = datasynth::build_dataset(static_cast<std::size_t>(count), seed, out, dc);
  std::printf("wrote %zu samples to %s\n", m.entries.size(), out.c_str());
  return 0;
}

struct TrainArgs {
  std::string component, data, ckpt;
  std::optional<int> iterations, batch;
  std::optional<double> lr;
};

int run_train(const Globals& g, const TrainArgs& a) {
  trainfuse::TrainConfig tc;
  tc.component = trainfuse::parse_component(a.component);
  tc.seed = g.resolved_seed();
  tc.lr = a.lr.value_or(g.cfg.get_double("lr", tc.lr));
  tc.batch = a.batch.value_or(g.cfg.get_int("batch", tc.batch));
  tc.iterations = a.iterations.value_or(g.cfg.get_int("iterations", tc.iterations));
  tc.kl_weight = g.cfg.get_double("kl_weight", tc.kl_weight);
  tc.loss_weight = g.cfg.get_double("loss_weight", tc.loss_weight);
  tc.clip_norm = g.cfg.get_double("clip_norm", tc.clip_norm);
  tc.t_min = g.cfg.get_int("t_min", tc.t_min);
  tc.t_max = g.cfg.get_int("t_max", tc.t_max);
  tc.validate();

  const fs::path out(g.out);
  const fs::path ckpt = a.ckpt.empty() ? out / "model.ckpt" : fs::path(a.ckpt);
  const trainfuse::ModelConfig model = model_from(g.cfg);
  g.cfg.require_all_used();

  const datasynth::Manifest manifest = datasynth::read_manifest(a.data);
  std::vector<trainfuse::SynthSample> data;
  data.reserve(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) data.push_back(datasynth::load_sample(manifest, i));

  trainfuse::Bundle bundle = fs::exists(ckpt) ? trainfuse::Bundle::load(ckpt) : trainfuse::Bundle(model);
  fs::create_directories(out);
  trainfuse::MetricsLog log(out / "metrics.jsonl");
  const trainfuse::TrainReport rep = trainfuse::train(bundle, data, tc, std::ref(log));
  bundle.save(ckpt);
  if (rep.losses.empty())
    std::printf("%s already at %ld steps\n", a.component.c_str(), rep.last_step);
  else
    std::printf("%s steps %ld..%ld loss %.6f -> %.6f\n", a.component.c_str(), rep.first_step + 1, rep.last_step,
                rep.losses.front(), rep.losses.back());
  return 0;
}

int run_prealign(const Globals& g, const std::string& ue, const std::string& oe, const std::string& fwd,
                 const std::string& bwd) {
  const ConsistencyParams cp = consistency_from(g.cfg);
  g.cfg.require_all_used();
  const std::optional<PrecomputedFlow> flows = flows_from(fwd, bwd);
  const ImageRGB u = load_image(ue), o = load_image(oe);
  const PreAlignResult r = flows ? prealign(u, o, cp, *flows) : prealign(u, o, cp);
  fs::create_directories(g.out);
  save_stage1(r, g.out);
  return 0;
}

int run_fuse(const Globals& g, const std::string& ckpt, const std::string& ue, const std::string& oe,
             const std::string& fwd, const std::string& bwd, std::optional<int> steps) {
  trainfuse::FusionRequest req;
  req.consistency = consistency_from(g.cfg);
  req.steps = steps.value_or(g.cfg.get_int("steps", req.steps));
  req.seed = g.resolved_seed();
  g.cfg.require_all_used();
  const std::optional<PrecomputedFlow> flows = flows_from(fwd, bwd);
  if (flows) req.estimator = &*flows;
  req.ue = load_image(ue);
  req.oe = load_image(oe);
  const trainfuse::Bundle bundle = trainfuse::Bundle::load(ckpt);
  const trainfuse::FusionResult r = trainfuse::fuse(bundle, req);
  const fs::path out(g.out);
  fs::create_directories(out);
  save_image(r.image, out / "fused.png", BitDepth::k16);
  save_plane(r.structure, out / "structure.png");
  save_stage1(r.stage1, out);
  return 0;
}

int run_eval(const Globals& g, const std::string& ckpt, const std::string& scenes, std::optional<int> steps) {
  evalcli::BenchmarkOptions opt;
  opt.steps = steps.value_or(g.cfg.get_int("steps", opt.steps));
  opt.seed = g.resolved_seed();
  opt.consistency = consistency_from(g.cfg);
  opt.mef.window = g.cfg.get_int("mef_window", opt.mef.window);
  opt.mef.stride = g.cfg.get_int("mef_stride", opt.mef.stride);
  opt.mef.c2 = g.cfg.get_double("mef_c2", opt.mef.c2);
  opt.mef.max_exponent = g.cfg.get_double("mef_max_exponent", opt.mef.max_exponent);
  opt.diagnostics = g.cfg.get_bool("diagnostics", opt.diagnostics);
  opt.plots = g.cfg.get_bool("plots", opt.plots);
  g.cfg.require_all_used();
  const trainfuse::Bundle bundle = trainfuse::Bundle::load(ckpt);
  const evalcli::EvalReport r = evalcli::run_benchmark(scenes, bundle, g.out, opt);
  for (const std::string& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("%zu scenes, %zu warnings\n", r.records.size(), r.warnings.size());
  for (const auto& [name, v] : r.aggregates) std::printf("  %-10s %.6f\n", name.c_str(), v);
  return 0;
}

int run_report(const Globals& g, const std::string& input) {
  g.cfg.require_all_used();
  const evalcli::EvalReport r = evalcli::read_report(input);
  evalcli::write_plots(r, fs::path(g.out) / "plots");
  std::printf("report version %s: %zu scenes, %zu warnings\n", r.version.c_str(), r.records.size(),
              r.warnings.size());
  for (const auto& [name, v] : r.aggregates) std::printf("  %-10s %.6f\n", name.c_str(), v);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided-inpainting exposure fusion"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (overrides config 'seed')");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "Synthesize training samples or benchmark scenes");
  int count = 100, size = 0;
  bool benchmark = false;
  synth->add_option("--count", count, "Number of samples or scenes")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", size, "Patch (or scene) size; config 'patch' / 'scene_size' otherwise");
  synth->add_flag("--benchmark", benchmark, "Write ue/oe/gt scene folders instead of a training set");

  auto* train = app.add_subcommand("train", "Train one component of a model bundle");
  TrainArgs ta;
  train->add_option("--component", ta.component, "vae|backbone|dfcb|fcb")->required();
  train->add_option("--data", ta.data, "Dataset directory (manifest.jsonl)")->required();
  train->add_option("--ckpt", ta.ckpt, "Bundle checkpoint, resumed when present (default <out>/model.ckpt)");
  train->add_option("--iterations", ta.iterations, "Total steps for the component");
  train->add_option("--lr", ta.lr);
  train->add_option("--batch", ta.batch);

  auto* pre = app.add_subcommand("prealign", "Warp and mask the under-exposed image onto the over-exposed one");
  std::string ue, oe, fwd, bwd, ckpt, scenes, input;
  std::optional<int> steps;
  pre->add_option("--ue", ue)->required()->check(CLI::ExistingFile);
  pre->add_option("--oe", oe)->required()->check(CLI::ExistingFile);
  pre->add_option("--flow-fwd", fwd, "Precomputed oe->ue flow")->check(CLI::ExistingFile);
  pre->add_option("--flow-bwd", bwd, "Precomputed ue->oe flow")->check(CLI::ExistingFile);

  auto* fuse = app.add_subcommand("fuse", "Fuse an exposure pair with a trained bundle");
  fuse->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  fuse->add_option("--ue", ue)->required()->check(CLI::ExistingFile);
  fuse->add_option("--oe", oe)->required()->check(CLI::ExistingFile);
  fuse->add_option("--flow-fwd", fwd)->check(CLI::ExistingFile);
  fuse->add_option("--flow-bwd", bwd)->check(CLI::ExistingFile);
  fuse->add_option("--steps", steps, "Sampler steps");

  auto* eval = app.add_subcommand("eval", "Benchmark a bundle over scene folders");
  eval->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--scenes", scenes)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--steps", steps, "Sampler steps");

  auto* report = app.add_subcommand("report", "Validate a report and redraw its plots");
  report->add_option("--input", input)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!g.config_path.empty()) g.cfg = evalcli::KeyValueConfig::load(g.config_path);
    if (*synth) return run_synth(g, count, benchmark, size);
    if (*train) return run_train(g, ta);
    if (*pre) return run_prealign(g, ue, oe, fwd, bwd);
    if (*fuse) return run_fuse(g, ckpt, ue, oe, fwd, bwd, steps);
    if (*eval) return run_eval(g, ckpt, scenes, steps);
    if (*report) return run_report(g, input);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
