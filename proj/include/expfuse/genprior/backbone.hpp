#pragma once

#include <functional>

#include "expfuse/genprior/schedule.hpp"
#include "expfuse/genprior/unet.hpp"
#include "expfuse/genprior/vae.hpp"
#include "expfuse/nn/checkpoint.hpp"

namespace expfuse::genprior {

struct SamplerOptions {
  int steps = 50;
  std::uint64_t seed = 0;
};

// Called once per sampler step with the current latent and timestep; returns
// the residuals for that step (an empty vector means none).
using Conditioner = std::function<ControlResiduals<float>(const Tensor<float>& zt, int t)>;

// Seeded standard-normal tensor.
Tensor<float> gaussian_noise(Shape shape, std::uint64_t seed);

// Deterministic DDIM (eta = 0) over spaced timesteps; returns the final z0 estimate.
Tensor<float> ddim_sample(const UNet<float>& unet, const NoiseSchedule& schedule, Shape latent_shape,
                          const SamplerOptions& opts, const Conditioner& conditioner = {});

// Frozen generative prior: VAE, denoiser and schedule. Sampling requires the
// weights to be marked ready (loaded from a checkpoint or produced by training).
class Backbone {
 public:
  Backbone(BackboneConfig unet_cfg, VaeConfig vae_cfg, NoiseSchedule schedule = NoiseSchedule());

  UNet<float> unet;
  VAE<float> vae;
  NoiseSchedule schedule;

  bool ready() const noexcept { return ready_; }
  void mark_ready(bool ready = true) noexcept { ready_ = ready; }
  void require_ready() const;

  Tensor<float> sample(Shape latent_shape, const SamplerOptions& opts, const Conditioner& conditioner = {}) const;

  // Writes configs, schedule, latent scale and the "vae" / "unet" namespaces.
  void save_to(nn::Checkpoint& ck) const;
  static Backbone from_checkpoint(const nn::Checkpoint& ck);

 private:
  bool ready_ = false;
};

}  // namespace expfuse::genprior
