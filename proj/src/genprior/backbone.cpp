#include "expfuse/genprior/backbone.hpp"

#include <cmath>
#include <random>

namespace expfuse::genprior {

Tensor<float> gaussian_noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor<float> t(shape);
  for (float& v : t.data()) v = d(rng);
  return t;
}

Tensor<float> ddim_sample(const UNet<float>& unet, const NoiseSchedule& schedule, Shape latent_shape,
                          const SamplerOptions& opts, const Conditioner& conditioner) {
  const std::vector<int> ts = spaced_timesteps(schedule.steps(), opts.steps);
  Tensor<float> z = gaussian_noise(latent_shape, opts.seed);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const std::vector<int> tv(latent_shape.n, t);
    ControlResiduals<float> res;
    if (conditioner) res = conditioner(z, t);
    const Tensor<float> eps = unet.predict(z, tv, res.empty() ? nullptr : &res);
    Tensor<float> z0 = recover_z0(schedule, z, tv, eps);
    if (i + 1 == ts.size()) return z0;
    const double ab_prev = schedule.alpha_bar(ts[i + 1]);
    const auto a = static_cast<float>(std::sqrt(ab_prev));
    const auto b = static_cast<float>(std::sqrt(1.0 - ab_prev));
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = a * z0[k] + b * eps[k];
    for (float v : z.data())
      if (!std::isfinite(v)) throw NumericError("ddim_sample: non-finite latent at t=" + std::to_string(t));
  }
  return z;
}

Backbone::Backbone(BackboneConfig unet_cfg, VaeConfig vae_cfg, NoiseSchedule sched)
    : unet(std::move(unet_cfg)), vae(std::move(vae_cfg)), schedule(std::move(sched)) {
  require(unet.config().latent_channels == vae.config().latent_channels,
          "Backbone: U-Net and VAE latent channel counts differ");
}

void Backbone::require_ready() const {
  if (!ready_) throw StateError("backbone weights are not loaded");
}

Tensor<float> Backbone::sample(Shape latent_shape, const SamplerOptions& opts, const Conditioner& conditioner) const {
  require_ready();
  return ddim_sample(unet, schedule, latent_shape, opts, conditioner);
}

void Backbone::save_to(nn::Checkpoint& ck) const {
  ck.meta["backbone"] = {{"unet", unet.config().to_json()},
                         {"vae", vae.config().to_json()},
                         {"schedule", schedule.to_json()},
                         {"latent_scale", vae.latent_scale()}};
  ck.put_params("vae", vae.params());
  ck.put_params("unet", unet.params());
  ck.put("vae_latent_scale", Tensor<float>(Shape{1, 1, 1, 1}, vae.latent_scale()));
}

Backbone Backbone::from_checkpoint(const nn::Checkpoint& ck) {
  if (!ck.meta.contains("backbone")) throw StateError("checkpoint holds no backbone");
  const auto& m = ck.meta["backbone"];
  Backbone b(BackboneConfig::from_json(m.at("unet")), VaeConfig::from_json(m.at("vae")),
             NoiseSchedule::from_json(m.at("schedule")));
  ck.get_params("vae", b.vae.params());
  ck.get_params("unet", b.unet.params());
  b.vae.set_latent_scale(ck.get("vae_latent_scale")[0]);
  b.mark_ready();
  return b;
}

}  // namespace expfuse::genprior
