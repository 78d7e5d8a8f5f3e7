#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "expfuse/control/branches.hpp"
#include "expfuse/datasynth/datasynth.hpp"
#include "expfuse/genprior/backbone.hpp"
#include "expfuse/nn/adam.hpp"
#include "expfuse/prealign/prealign.hpp"

namespace expfuse::trainfuse {

using datasynth::SynthSample;

enum class Component { kVae, kBackbone, kDfcb, kFcb };

const char* to_string(Component c);
// Accepts "vae", "backbone", "dfcb", "fcb".
Component parse_component(const std::string& name);

struct TrainConfig {
  Component component = Component::kBackbone;
  double lr = 1e-4;
  int batch = 4;
  int iterations = 500;  // total steps for the component; resuming continues up to this
  std::uint64_t seed = 0;
  double kl_weight = 1e-6;    // VAE only
  double loss_weight = 1.0;   // multiplies the component's main loss
  int t_min = 0;              // timesteps drawn uniformly from [t_min, t_max]
  int t_max = -1;             // -1: last schedule step
  double clip_norm = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct ModelConfig {
  genprior::BackboneConfig unet;
  genprior::VaeConfig vae;
  std::uint64_t dfcb_seed = 5;
  std::uint64_t fcb_seed = 6;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  Component component;
  long step = 0;  // 1-based index of the finished step
  double loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the run started
  bool finite = true;
  std::vector<std::size_t> batch;  // dataset indices used at this step
};

using StepCallback = std::function<void(const StepRecord&)>;

// JSON-lines metrics log: step, loss, lr, wall_time (and the batch on failure).
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path, bool append = true);
  void operator()(const StepRecord& r);

 private:
  std::ofstream out_;
};

struct TrainReport {
  long first_step = 0;  // steps already done before this call
  long last_step = 0;
  std::vector<double> losses;  // one per step run here
};

// All trainable state: backbone, control branches, optimiser moments and
// per-component progress. One checkpoint file holds a whole bundle.
class Bundle {
 public:
  explicit Bundle(const ModelConfig& cfg = {});

  const ModelConfig& config() const noexcept { return cfg_; }

  genprior::Backbone backbone;
  std::unique_ptr<control::DFCB<float>> dfcb;
  std::unique_ptr<control::FCB<float>> fcb;

  long steps_done(Component c) const;
  bool complete(Component c) const;
  // Throws StateError unless the stage finished.
  void require_complete(Component c, const std::string& needed_by) const;

  nn::ParamStore<float>& params(Component c);
  const nn::ParamStore<float>& params(Component c) const;

  // Creates the branches from the frozen backbone when missing.
  void ensure_dfcb();
  void ensure_fcb();

  nn::Checkpoint to_checkpoint() const;
  static Bundle from_checkpoint(const nn::Checkpoint& ck);
  void save(const std::filesystem::path& path) const;
  static Bundle load(const std::filesystem::path& path);

 private:
  friend TrainReport train(Bundle&, std::span<const SynthSample>, const TrainConfig&, const StepCallback&);
  struct Progress {
    long steps = 0;
    bool complete = false;
  };
  ModelConfig cfg_;
  std::map<Component, Progress> progress_;
  std::map<Component, nn::Adam> optim_;
};

// Runs the selected component from its recorded progress up to
// cfg.iterations. Everything else in the bundle stays bit-identical. A
// non-finite loss raises NumericError naming the step and batch indices.
TrainReport train(Bundle& bundle, std::span<const SynthSample> data, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// VAE stage then denoiser stage, each with its own config.
std::pair<TrainReport, TrainReport> train_backbone(Bundle& bundle, std::span<const SynthSample> data,
                                                   const TrainConfig& vae_cfg, const TrainConfig& unet_cfg,
                                                   const StepCallback& on_step = {});

// Held-out diagnostics.
double vae_psnr(const genprior::VAE<float>& vae, std::span<const SynthSample> data);
double fcb_l1(const Bundle& bundle, std::span<const SynthSample> data, bool with_shortcuts);
double denoiser_loss(const Bundle& bundle, std::span<const SynthSample> data, std::uint64_t seed, bool conditioned);

struct FusionRequest {
  ImageRGB ue;
  ImageRGB oe;
  ConsistencyParams consistency;
  int steps = 50;
  std::uint64_t seed = 0;
  const FlowEstimator* estimator = nullptr;  // built-in estimator when null
};

struct FusionResult {
  ImageRGB image;
  PreAlignResult stage1;  // guidance, mask and both flows
  Plane structure;
};

// Stage 1 pre-alignment, then guided sampling with per-step control
// residuals and a shortcut-conditioned decode. Inputs are edge-padded to the
// model's spatial divisor internally; the output matches the oe size.
FusionResult fuse(const Bundle& bundle, const FusionRequest& req);

}  // namespace expfuse::trainfuse
