#pragma once

#include <map>
#include <string>

#include "expfuse/nn/checkpoint.hpp"

namespace expfuse::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

// Adam over the trainable parameters of one store. Frozen parameters are
// never touched, so freeze contracts hold bit for bit.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  // Returns the pre-clip global gradient norm.
  double step(ParamStore<float>& ps);

  long steps() const noexcept { return t_; }
  // New hyperparameters; moments and step count are kept.
  void reconfigure(AdamConfig cfg);
  const AdamConfig& config() const noexcept { return cfg_; }

  void save_state(Checkpoint& ck, const std::string& ns) const;
  void load_state(const Checkpoint& ck, const std::string& ns);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Tensor<float>> m_;
  std::map<std::string, Tensor<float>> v_;
};

}  // namespace expfuse::nn
