#include <cmath>

#include "expfuse/imgcore/error.hpp"
#include "expfuse/trainfuse/trainfuse.hpp"

namespace expfuse::trainfuse {

namespace {

constexpr Component kAll[] = {Component::kVae, Component::kBackbone, Component::kDfcb, Component::kFcb};

std::string optim_ns(Component c) { return std::string("optim_") + to_string(c); }

}  // namespace

const char* to_string(Component c) {
  switch (c) {
    case Component::kVae: return "vae";
    case Component::kBackbone: return "backbone";
    case Component::kDfcb: return "dfcb";
    case Component::kFcb: return "fcb";
  }
  return "?";
}

Component parse_component(const std::string& name) {
  for (Component c : kAll)
    if (name == to_string(c)) return c;
  throw ValidationError("unknown component '" + name + "' (expected vae|backbone|dfcb|fcb)");
}

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), "train: learning rate must be > 0");
  require(iterations >= 1, "train: iterations must be >= 1");
  require(batch >= 1, "train: batch must be >= 1");
  require(kl_weight >= 0.0 && loss_weight > 0.0, "train: loss weights must be positive");
  require(t_min >= 0 && (t_max < 0 || t_max >= t_min), "train: bad timestep range");
  require(clip_norm >= 0.0, "train: clip_norm must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"component", to_string(component)}, {"lr", lr},          {"batch", batch},
          {"iterations", iterations},          {"seed", seed},      {"kl_weight", kl_weight},
          {"loss_weight", loss_weight},        {"t_min", t_min},    {"t_max", t_max},
          {"clip_norm", clip_norm}};
}

nlohmann::json ModelConfig::to_json() const {
  return {{"unet", unet.to_json()}, {"vae", vae.to_json()}, {"dfcb_seed", dfcb_seed}, {"fcb_seed", fcb_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.unet = genprior::BackboneConfig::from_json(j.at("unet"));
  c.vae = genprior::VaeConfig::from_json(j.at("vae"));
  c.dfcb_seed = j.at("dfcb_seed").get<std::uint64_t>();
  c.fcb_seed = j.at("fcb_seed").get<std::uint64_t>();
  return c;
}

Bundle::Bundle(const ModelConfig& cfg) : backbone(cfg.unet, cfg.vae), cfg_(cfg) {
  for (Component c : kAll) progress_[c] = Progress{};
}

long Bundle::steps_done(Component c) const { return progress_.at(c).steps; }

bool Bundle::complete(Component c) const { return progress_.at(c).complete; }

void Bundle::require_complete(Component c, const std::string& needed_by) const {
  if (!complete(c))
    throw StateError(needed_by + " needs a trained " + to_string(c) + " (not present in the checkpoint)");
}

nn::ParamStore<float>& Bundle::params(Component c) {
  return const_cast<nn::ParamStore<float>&>(static_cast<const Bundle&>(*this).params(c));
}

const nn::ParamStore<float>& Bundle::params(Component c) const {
  switch (c) {
    case Component::kVae: return backbone.vae.params();
    case Component::kBackbone: return backbone.unet.params();
    case Component::kDfcb:
      if (!dfcb) throw StateError("bundle has no dfcb");
      return dfcb->params();
    case Component::kFcb:
      if (!fcb) throw StateError("bundle has no fcb");
      return fcb->params();
  }
  throw StateError("bad component");
}

void Bundle::ensure_dfcb() {
  if (dfcb) return;
  require_complete(Component::kBackbone, "dfcb training");
  dfcb = std::make_unique<control::DFCB<float>>(cfg_.unet, cfg_.dfcb_seed);
  dfcb->init_from(backbone.unet);
}

void Bundle::ensure_fcb() {
  if (fcb) return;
  require_complete(Component::kVae, "fcb training");
  fcb = std::make_unique<control::FCB<float>>(cfg_.vae, cfg_.fcb_seed);
  fcb->init_from(backbone.vae);
}

nn::Checkpoint Bundle::to_checkpoint() const {
  nn::Checkpoint ck;
  backbone.save_to(ck);
  ck.meta["model"] = cfg_.to_json();
  for (Component c : kAll) {
    const Progress& p = progress_.at(c);
    ck.meta["progress"][to_string(c)] = {{"steps", p.steps}, {"complete", p.complete}};
  }
  if (dfcb) ck.put_params("dfcb", dfcb->params());
  if (fcb) ck.put_params("fcb", fcb->params());
  for (const auto& [c, opt] : optim_) opt.save_state(ck, optim_ns(c));
  return ck;
}

Bundle Bundle::from_checkpoint(const nn::Checkpoint& ck) {
  if (!ck.meta.contains("model")) throw StateError("checkpoint holds no model bundle");
  Bundle b(ModelConfig::from_json(ck.meta["model"]));
  ck.get_params("vae", b.backbone.vae.params());
  ck.get_params("unet", b.backbone.unet.params());
  b.backbone.vae.set_latent_scale(ck.get("vae_latent_scale")[0]);
  for (Component c : kAll) {
    const auto& p = ck.meta.at("progress").at(to_string(c));
    b.progress_[c] = Progress{p.at("steps").get<long>(), p.at("complete").get<bool>()};
  }
  if (ck.has_namespace("dfcb")) {
    b.dfcb = std::make_unique<control::DFCB<float>>(b.cfg_.unet, b.cfg_.dfcb_seed);
    ck.get_params("dfcb", b.dfcb->params());
  }
  if (ck.has_namespace("fcb")) {
    b.fcb = std::make_unique<control::FCB<float>>(b.cfg_.vae, b.cfg_.fcb_seed);
    ck.get_params("fcb", b.fcb->params());
  }
  if (ck.meta.contains("optim"))
    for (Component c : kAll)
      if (ck.meta["optim"].contains(optim_ns(c))) b.optim_[c].load_state(ck, optim_ns(c));
  b.backbone.mark_ready(b.complete(Component::kVae) && b.complete(Component::kBackbone));
  return b;
}

void Bundle::save(const std::filesystem::path& path) const { to_checkpoint().save(path); }

Bundle Bundle::load(const std::filesystem::path& path) { return from_checkpoint(nn::Checkpoint::load(path)); }

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw IoError(IoErrc::kWriteFailed, "cannot open metrics log " + path.string());
}

void MetricsLog::operator()(const StepRecord& r) {
  nlohmann::json j = {{"component", to_string(r.component)}, {"step", r.step}, {"lr", r.lr},
                      {"wall_time", r.wall_time}};
  if (r.finite) {
    j["loss"] = r.loss;
  } else {
    j["loss"] = nullptr;
    j["error"] = "non-finite loss";
    j["batch"] = r.batch;
  }
  out_ << j.dump() << '\n';
  out_.flush();
}

}  // namespace expfuse::trainfuse
