#pragma once

#include <vector>

#include "expfuse/nn/tensor.hpp"
#include "json.hpp"

namespace expfuse::genprior {

using nn::Shape;
using nn::Tensor;

// DDPM variance schedule with linearly spaced betas.
class NoiseSchedule {
 public:
  static constexpr int kDefaultSteps = 1000;

  explicit NoiseSchedule(int steps = kDefaultSteps, double beta_start = 1e-4, double beta_end = 0.02);

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  double beta_start_;
  double beta_end_;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// z_t = sqrt(ab[t]) z0 + sqrt(1 - ab[t]) eps, with one step per batch sample.
template <class T>
Tensor<T> add_noise(const NoiseSchedule& s, const Tensor<T>& z0, const std::vector<int>& t, const Tensor<T>& eps);

// Closed-form inversion of add_noise given the noise.
template <class T>
Tensor<T> recover_z0(const NoiseSchedule& s, const Tensor<T>& zt, const std::vector<int>& t, const Tensor<T>& eps);

// Descending timesteps for a spaced deterministic sampler:
// t_i = round(T - i T / steps) - 1, i = 0..steps-1. steps=1 gives {T-1}.
std::vector<int> spaced_timesteps(int total, int steps);

}  // namespace expfuse::genprior
