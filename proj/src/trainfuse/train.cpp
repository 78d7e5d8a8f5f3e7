#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>

#include "expfuse/control/decompose.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/nn/image_tensor.hpp"
#include "expfuse/trainfuse/trainfuse.hpp"

namespace expfuse::trainfuse {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

// Per-sample tensors derived through frozen components, computed on first use.
class SampleCache {
 public:
  SampleCache(const Bundle& b, std::span<const SynthSample> data) : b_(b), data_(data), rows_(data.size()) {}

  const Tensor<float>& gt(std::size_t i) { return get(rows_[i].gt, [&] { return nn::image_to_tensor(data_[i].gt); }); }
  const Tensor<float>& oe(std::size_t i) { return get(rows_[i].oe, [&] { return nn::image_to_tensor(data_[i].oe); }); }
  const Tensor<float>& z0(std::size_t i) { return get(rows_[i].z0, [&] { return b_.backbone.vae.encode(gt(i)); }); }
  const Tensor<float>& y_oe(std::size_t i) {
    return get(rows_[i].y_oe, [&] { return b_.backbone.vae.encode(oe(i)); });
  }
  const Tensor<float>& structure(std::size_t i) {
    guidance(i);
    return *rows_[i].structure;
  }
  const Tensor<float>& chroma(std::size_t i) {
    guidance(i);
    return *rows_[i].chroma;
  }

  template <class F>
  Tensor<float> batch(const std::vector<std::size_t>& idx, F&& field) {
    std::vector<Tensor<float>> parts;
    parts.reserve(idx.size());
    for (std::size_t i : idx) parts.push_back(field(i));
    return nn::stack_batch<float>(parts);
  }

 private:
  struct Row {
    std::optional<Tensor<float>> gt, oe, z0, y_oe, structure, chroma;
  };

  template <class F>
  static const Tensor<float>& get(std::optional<Tensor<float>>& slot, F&& make) {
    if (!slot) slot = make();
    return *slot;
  }

  void guidance(std::size_t i) {
    if (rows_[i].structure) return;
    const control::GuidancePack p = control::decompose(data_[i].guidance, data_[i].mask);
    control::GuidanceTensors t = control::guidance_tensors(std::span(&p, 1));
    rows_[i].structure = std::move(t.structure);
    rows_[i].chroma = std::move(t.chroma);
  }

  const Bundle& b_;
  std::span<const SynthSample> data_;
  std::vector<Row> rows_;
};

int last_step(const Bundle& b, const TrainConfig& cfg) {
  const int T = b.backbone.schedule.steps();
  const int hi = cfg.t_max < 0 ? T - 1 : cfg.t_max;
  require(hi < T, "train: t_max beyond the schedule");
  require(cfg.t_min <= hi, "train: empty timestep range");
  return hi;
}

// Builds one step's graph, back-propagates, returns the loss value.
double run_step(Bundle& b, SampleCache& cache, const TrainConfig& cfg, const std::vector<std::size_t>& idx,
                std::mt19937_64& rng) {
  Graph<float> g;
  const auto w = static_cast<float>(cfg.loss_weight);
  auto timesteps = [&] {
    std::uniform_int_distribution<int> d(cfg.t_min, last_step(b, cfg));
    std::vector<int> t(idx.size());
    for (int& v : t) v = d(rng);
    return t;
  };

  switch (cfg.component) {
    case Component::kVae: {
      const genprior::VAE<float>& vae = b.backbone.vae;
      const int c = vae.config().latent_channels;
      Var x = g.constant(cache.batch(idx, [&](std::size_t i) { return cache.gt(i); }));
      Var m = vae.encode_moments(g, x);
      Var mu = nn::slice_channels(g, m, 0, c);
      Var lv = nn::slice_channels(g, m, c, c);
      const Shape zs = g.shape(mu);
      Var eps = g.constant(genprior::gaussian_noise(zs, rng()));
      Var z = nn::add(g, mu, nn::mul(g, nn::exp(g, nn::scale(g, lv, 0.5f)), eps));
      Var recon = nn::scale(g, nn::l1(g, vae.decode(g, z), x), w);
      // KL to N(0, I) per latent element, without its constant -1/2.
      Var kl = nn::scale(g, nn::mean_all(g, nn::sub(g, nn::add(g, nn::square(g, mu), nn::exp(g, lv)), lv)), 0.5f);
      Var loss = nn::add(g, recon, nn::scale(g, kl, static_cast<float>(cfg.kl_weight)));
      const double value = g.item(loss) - 0.5 * cfg.kl_weight;
      if (std::isfinite(value)) g.backward(loss);
      return value;
    }
    case Component::kBackbone:
    case Component::kDfcb: {
      const Tensor<float> z0 = cache.batch(idx, [&](std::size_t i) { return cache.z0(i); });
      const std::vector<int> t = timesteps();
      const Tensor<float> eps = genprior::gaussian_noise(z0.shape(), rng());
      const Tensor<float> zt = genprior::add_noise(b.backbone.schedule, z0, t, eps);
      Var ztv = g.constant(zt);
      std::vector<Var> res;
      if (cfg.component == Component::kDfcb) {
        res = b.dfcb->forward(g, ztv, g.constant(cache.batch(idx, [&](std::size_t i) { return cache.y_oe(i); })),
                              g.constant(cache.batch(idx, [&](std::size_t i) { return cache.structure(i); })),
                              g.constant(cache.batch(idx, [&](std::size_t i) { return cache.chroma(i); })), t);
      }
      Var pred = b.backbone.unet.forward(g, ztv, t, res.empty() ? nullptr : &res);
      Var loss = nn::scale(g, nn::mse(g, pred, g.constant(eps)), w);
      const double value = g.item(loss);
      if (std::isfinite(value)) g.backward(loss);
      return value;
    }
    case Component::kFcb: {
      const genprior::VAE<float>& vae = b.backbone.vae;
      std::vector<Var> sc = b.fcb->forward(
          g, g.constant(cache.batch(idx, [&](std::size_t i) { return cache.oe(i); })),
          g.constant(cache.batch(idx, [&](std::size_t i) { return cache.structure(i); })),
          g.constant(cache.batch(idx, [&](std::size_t i) { return cache.chroma(i); })));
      Var z = nn::scale(g, g.constant(cache.batch(idx, [&](std::size_t i) { return cache.z0(i); })),
                        1.0f / vae.latent_scale());
      Var out = vae.decode(g, z, &sc);
      Var loss = nn::scale(g, nn::l1(g, out, g.constant(cache.batch(idx, [&](std::size_t i) { return cache.gt(i); }))), w);
      const double value = g.item(loss);
      if (std::isfinite(value)) g.backward(loss);
      return value;
    }
  }
  throw StateError("bad component");
}

// 1 / std of the posterior means over (up to) the first 256 samples.
float estimate_latent_scale(const genprior::VAE<float>& vae, std::span<const SynthSample> data) {
  double s = 0.0, s2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < std::min<std::size_t>(data.size(), 256); ++i) {
    const Tensor<float> z = vae.encode(nn::image_to_tensor(data[i].gt));
    for (float x : z.data()) {
      s += x;
      s2 += static_cast<double>(x) * x;
      ++count;
    }
  }
  const double mean = s / count;
  const double var = s2 / count - mean * mean;
  if (!(var > 1e-12) || !std::isfinite(var)) throw NumericError("VAE latents are degenerate (variance " + std::to_string(var) + ")");
  return static_cast<float>(vae.latent_scale() / std::sqrt(var));
}

}  // namespace

TrainReport train(Bundle& b, std::span<const SynthSample> data, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  const Component c = cfg.component;
  switch (c) {
    case Component::kVae: break;
    case Component::kBackbone: b.require_complete(Component::kVae, "denoiser training"); break;
    case Component::kDfcb: b.ensure_dfcb(); break;
    case Component::kFcb: b.ensure_fcb(); break;
  }
  if (c != Component::kVae) last_step(b, cfg);

  for (Component other : {Component::kVae, Component::kBackbone, Component::kDfcb, Component::kFcb}) {
    if (other == Component::kDfcb && !b.dfcb) continue;
    if (other == Component::kFcb && !b.fcb) continue;
    b.params(other).set_trainable(other == c);
  }

  Bundle::Progress& prog = b.progress_[c];
  TrainReport rep{prog.steps, prog.steps, {}};
  auto finish = [&] {
    prog.complete = true;
    b.backbone.mark_ready(b.complete(Component::kVae) && b.complete(Component::kBackbone));
  };
  if (prog.steps >= cfg.iterations) {
    finish();
    return rep;
  }
  prog.complete = false;
  b.backbone.mark_ready(b.complete(Component::kVae) && b.complete(Component::kBackbone));

  const nn::AdamConfig adam{.lr = cfg.lr, .clip_norm = cfg.clip_norm};
  if (prog.steps == 0) b.optim_[c] = nn::Adam(adam);
  nn::Adam& opt = b.optim_[c];
  opt.reconfigure(adam);

  SampleCache cache(b, data);
  nn::ParamStore<float>& ps = b.params(c);
  const auto start = std::chrono::steady_clock::now();
  for (long step = prog.steps; step < cfg.iterations; ++step) {
    std::mt19937_64 rng = datasynth::derive_rng(cfg.seed, static_cast<std::uint64_t>(step),
                                                0x7F00 + static_cast<std::uint64_t>(c));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch));
    for (std::size_t& i : idx) i = pick(rng);

    ps.zero_grad();
    const double loss = run_step(b, cache, cfg, idx, rng);
    StepRecord rec{c, step + 1, loss, cfg.lr,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
                   std::isfinite(loss), idx};
    if (!rec.finite) {
      if (on_step) on_step(rec);
      std::ostringstream msg;
      msg << to_string(c) << " training: non-finite loss at step " << rec.step << ", batch indices [";
      for (std::size_t k = 0; k < idx.size(); ++k) msg << (k ? ", " : "") << idx[k];
      msg << "]";
      throw NumericError(msg.str());
    }
    opt.step(ps);
    prog.steps = step + 1;
    rep.losses.push_back(loss);
    rep.last_step = prog.steps;
    if (on_step) on_step(rec);
  }
  if (c == Component::kVae) b.backbone.vae.set_latent_scale(estimate_latent_scale(b.backbone.vae, data));
  finish();
  return rep;
}

std::pair<TrainReport, TrainReport> train_backbone(Bundle& b, std::span<const SynthSample> data,
                                                   const TrainConfig& vae_cfg, const TrainConfig& unet_cfg,
                                                   const StepCallback& on_step) {
  require(vae_cfg.component == Component::kVae && unet_cfg.component == Component::kBackbone,
          "train_backbone: configs must select vae then backbone");
  TrainReport a = train(b, data, vae_cfg, on_step);
  TrainReport d = train(b, data, unet_cfg, on_step);
  return {std::move(a), std::move(d)};
}

double vae_psnr(const genprior::VAE<float>& vae, std::span<const SynthSample> data) {
  require(!data.empty(), "vae_psnr: empty dataset");
  double se = 0.0;
  std::size_t count = 0;
  for (const SynthSample& s : data) {
    const ImageRGB r = genprior::vae_decode(vae, genprior::vae_encode(vae, s.gt));
    for (std::size_t i = 0; i < r.data().size(); ++i) {
      const double d = static_cast<double>(r.data()[i]) - s.gt.data()[i];
      se += d * d;
    }
    count += r.data().size();
  }
  const double mse = se / count;
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

double fcb_l1(const Bundle& b, std::span<const SynthSample> data, bool with_shortcuts) {
  require(!data.empty(), "fcb_l1: empty dataset");
  if (with_shortcuts && !b.fcb) throw StateError("fcb_l1: bundle has no fcb");
  double total = 0.0;
  std::size_t count = 0;
  for (const SynthSample& s : data) {
    const Tensor<float> gt = nn::image_to_tensor(s.gt);
    const Tensor<float> z = b.backbone.vae.encode(gt);
    Tensor<float> out;
    if (with_shortcuts) {
      const control::GuidancePack p = control::decompose(s.guidance, s.mask);
      const control::GuidanceTensors t = control::guidance_tensors(std::span(&p, 1));
      const std::vector<Tensor<float>> sc = b.fcb->shortcuts(nn::image_to_tensor(s.oe), t.structure, t.chroma);
      out = b.backbone.vae.decode(z, &sc);
    } else {
      out = b.backbone.vae.decode(z);
    }
    for (std::size_t i = 0; i < out.size(); ++i) total += std::abs(static_cast<double>(out[i]) - gt[i]);
    count += out.size();
  }
  return total / count;
}

double denoiser_loss(const Bundle& b, std::span<const SynthSample> data, std::uint64_t seed, bool conditioned) {
  require(!data.empty(), "denoiser_loss: empty dataset");
  if (conditioned && !b.dfcb) throw StateError("denoiser_loss: bundle has no dfcb");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::mt19937_64 rng = datasynth::derive_rng(seed, i, 0xE7A1);
    const Tensor<float> z0 = b.backbone.vae.encode(nn::image_to_tensor(data[i].gt));
    const std::vector<int> t{std::uniform_int_distribution<int>(0, b.backbone.schedule.steps() - 1)(rng)};
    const Tensor<float> eps = genprior::gaussian_noise(z0.shape(), rng());
    const Tensor<float> zt = genprior::add_noise(b.backbone.schedule, z0, t, eps);
    Tensor<float> pred;
    if (conditioned) {
      const control::GuidancePack p = control::decompose(data[i].guidance, data[i].mask);
      const control::GuidanceTensors gt = control::guidance_tensors(std::span(&p, 1));
      const genprior::ControlResiduals<float> r =
          b.dfcb->residuals(zt, b.backbone.vae.encode(nn::image_to_tensor(data[i].oe)), gt.structure, gt.chroma, t);
      pred = b.backbone.unet.predict(zt, t, &r);
    } else {
      pred = b.backbone.unet.predict(zt, t);
    }
    double se = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) se += (pred[k] - eps[k]) * (pred[k] - eps[k]);
    total += se / pred.size();
  }
  return total / data.size();
}

}  // namespace expfuse::trainfuse
