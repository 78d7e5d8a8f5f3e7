#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "expfuse/nn/ops.hpp"

namespace expfuse::testing {

using expfuse::nn::Graph;
using expfuse::nn::ParamStore;
using expfuse::nn::Shape;
using expfuse::nn::Tensor;
using expfuse::nn::Var;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// Contracts an arbitrary output against fixed pseudo-random weights so every
// output element contributes a distinct coefficient to the scalar loss.
inline Var random_projection(Graph<double>& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor<double> w(g.shape(y));
  for (double& v : w.data()) v = d(rng);
  return expfuse::nn::sum_all(g, expfuse::nn::mul(g, y, g.constant(std::move(w))));
}

// Central differences on `samples` randomly chosen coordinates of trainable
// parameters. Relative error uses max(|analytic|, |numeric|, floor).
inline GradCheckResult grad_check(ParamStore<double>& ps, const std::function<Var(Graph<double>&)>& loss_fn,
                                  int samples, std::uint64_t seed, double h = 1e-6, double floor = 1e-5) {
  ps.zero_grad();
  {
    Graph<double> g;
    Var loss = loss_fn(g);
    g.backward(loss);
  }
  std::vector<std::pair<std::string, std::size_t>> coords;
  for (auto& [name, p] : ps)
    if (p.trainable)
      for (std::size_t i = 0; i < p.value.size(); ++i) coords.emplace_back(name, i);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (static_cast<int>(coords.size()) > samples) coords.resize(samples);

  auto eval = [&] {
    Graph<double> g;
    return g.item(loss_fn(g));
  };
  GradCheckResult r;
  for (const auto& [name, i] : coords) {
    auto& p = ps.at(name);
    const double orig = p.value[i];
    p.value[i] = orig + h;
    const double fp = eval();
    p.value[i] = orig - h;
    const double fm = eval();
    p.value[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = p.grad[i];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                " numeric=" + std::to_string(numeric);
    }
    ++r.checked;
  }
  return r;
}

}  // namespace expfuse::testing
