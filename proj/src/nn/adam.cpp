#include "expfuse/nn/adam.hpp"

#include <cmath>

namespace expfuse::nn {

Adam::Adam(AdamConfig cfg) { reconfigure(cfg); }

void Adam::reconfigure(AdamConfig cfg) {
  cfg_ = cfg;
  require(cfg_.lr > 0.0, "Adam: learning rate must be positive");
  require(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0, "Adam: betas in [0,1)");
  require(cfg_.clip_norm >= 0.0, "Adam: clip_norm must be >= 0");
}

double Adam::step(ParamStore<float>& ps) {
  double sq = 0.0;
  for (const auto& [_, p] : ps)
    if (p.trainable)
      for (float gv : p.grad.data()) sq += static_cast<double>(gv) * gv;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("Adam: non-finite gradient norm");
  const float clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? static_cast<float>(cfg_.clip_norm / norm) : 1.0f;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto step_size = static_cast<float>(cfg_.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto eps = static_cast<float>(cfg_.eps);

  for (auto& [name, p] : ps) {
    if (!p.trainable) continue;
    auto [mit, fresh] = m_.try_emplace(name, p.value.shape());
    if (fresh) v_.emplace(name, Tensor<float>(p.value.shape()));
    Tensor<float>& m = mit->second;
    Tensor<float>& v = v_.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float gv = p.grad[i] * clip;
      m[i] = b1 * m[i] + (1.0f - b1) * gv;
      v[i] = b2 * v[i] + (1.0f - b2) * gv * gv;
      p.value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
  return norm;
}

void Adam::save_state(Checkpoint& ck, const std::string& ns) const {
  ck.meta["optim"][ns] = {{"t", t_}, {"lr", cfg_.lr}};
  for (const auto& [name, m] : m_) ck.put(ns + "/m/" + name, m);
  for (const auto& [name, v] : v_) ck.put(ns + "/v/" + name, v);
}

void Adam::load_state(const Checkpoint& ck, const std::string& ns) {
  if (!ck.meta.contains("optim") || !ck.meta["optim"].contains(ns))
    throw StateError("checkpoint has no optimizer state '" + ns + "'");
  t_ = ck.meta["optim"][ns].at("t").get<long>();
  m_.clear();
  v_.clear();
  const std::string mp = ns + "/m/";
  const std::string vp = ns + "/v/";
  for (const auto& [name, t] : ck.tensors()) {
    if (name.rfind(mp, 0) == 0) m_[name.substr(mp.size())] = t;
    if (name.rfind(vp, 0) == 0) v_[name.substr(vp.size())] = t;
  }
}

}  // namespace expfuse::nn
