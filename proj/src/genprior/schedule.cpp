#include "expfuse/genprior/schedule.hpp"

#include <cmath>

namespace expfuse::genprior {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : beta_start_(beta_start), beta_end_(beta_end) {
  require(steps >= 2, "NoiseSchedule: need at least 2 steps");
  require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "NoiseSchedule: betas must satisfy 0 < start <= end < 1");
  beta_.resize(steps);
  alpha_bar_.resize(steps);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    beta_[t] = beta_start + (beta_end - beta_start) * t / (steps - 1);
    prod *= 1.0 - beta_[t];
    alpha_bar_[t] = prod;
  }
  for (int t = 0; t < steps; ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0)) throw NumericError("NoiseSchedule: beta out of (0,1)");
    if (t > 0 && !(alpha_bar_[t] < alpha_bar_[t - 1])) throw NumericError("NoiseSchedule: alpha_bar not decreasing");
  }
}

double NoiseSchedule::beta(int t) const {
  require(t >= 0 && t < steps(), "timestep " + std::to_string(t) + " out of range");
  return beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  require(t >= 0 && t < steps(), "timestep " + std::to_string(t) + " out of range");
  return alpha_bar_[t];
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"steps", steps()}, {"beta_start", beta_start_}, {"beta_end", beta_end_}, {"kind", "linear"}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  return NoiseSchedule(j.at("steps").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
}

namespace {

template <class T, class F>
Tensor<T> per_sample(const Tensor<T>& a, const Tensor<T>& b, const std::vector<int>& t, F&& f) {
  require(a.shape() == b.shape(), "schedule: tensor shapes differ");
  require(static_cast<int>(t.size()) == a.shape().n, "schedule: one timestep per sample required");
  Tensor<T> out(a.shape());
  const std::size_t per = a.size() / std::max(1, a.shape().n);
  for (int n = 0; n < a.shape().n; ++n) {
    const auto [ca, cb] = f(t[n]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = static_cast<T>(ca * a[i] + cb * b[i]);
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> add_noise(const NoiseSchedule& s, const Tensor<T>& z0, const std::vector<int>& t, const Tensor<T>& eps) {
  return per_sample(z0, eps, t, [&](int ti) {
    const double ab = s.alpha_bar(ti);
    return std::pair{std::sqrt(ab), std::sqrt(1.0 - ab)};
  });
}

template <class T>
Tensor<T> recover_z0(const NoiseSchedule& s, const Tensor<T>& zt, const std::vector<int>& t, const Tensor<T>& eps) {
  return per_sample(zt, eps, t, [&](int ti) {
    const double ab = s.alpha_bar(ti);
    return std::pair{1.0 / std::sqrt(ab), -std::sqrt(1.0 - ab) / std::sqrt(ab)};
  });
}

std::vector<int> spaced_timesteps(int total, int steps) {
  require(steps >= 1 && steps <= total, "sampler steps must be in [1, T]");
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i)
    ts[i] = static_cast<int>(std::lround(total - static_cast<double>(i) * total / steps)) - 1;
  return ts;
}

template Tensor<float> add_noise(const NoiseSchedule&, const Tensor<float>&, const std::vector<int>&, const Tensor<float>&);
template Tensor<double> add_noise(const NoiseSchedule&, const Tensor<double>&, const std::vector<int>&, const Tensor<double>&);
template Tensor<float> recover_z0(const NoiseSchedule&, const Tensor<float>&, const std::vector<int>&, const Tensor<float>&);
template Tensor<double> recover_z0(const NoiseSchedule&, const Tensor<double>&, const std::vector<int>&, const Tensor<double>&);

}  // namespace expfuse::genprior
