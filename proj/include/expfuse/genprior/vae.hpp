#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "expfuse/imgcore/image.hpp"
#include "expfuse/nn/layers.hpp"
#include "json.hpp"

namespace expfuse::genprior {

using nn::Graph;
using nn::ParamStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

// widths[i] is the channel count at resolution H / 2^i; the latent sits at the
// last level, so the downsampling factor is 2^(levels-1).
struct VaeConfig {
  std::vector<int> widths{16, 32, 64};
  int latent_channels = 4;
  std::uint64_t seed = 2;

  int levels() const { return static_cast<int>(widths.size()); }
  int factor() const { return 1 << (levels() - 1); }
  void validate() const;

  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

// Pixel-space convolutional encoder: stem, one residual block per level and
// stride-2 convolutions between levels. Shared by the VAE and the fidelity branch.
template <class T>
struct VaeEncoder {
  nn::Conv2d<T> conv_in;
  std::vector<nn::ResBlock<T>> blocks;
  std::vector<nn::Conv2d<T>> down;

  static VaeEncoder make(ParamStore<T>& ps, const std::string& prefix, const VaeConfig& cfg, int in_channels,
                         nn::Rng& rng);

  // Feature maps after each level's block, finest first.
  std::vector<Var> features(Graph<T>& g, Var x) const;
};

template <class T>
class VAE {
 public:
  explicit VAE(VaeConfig cfg);

  const VaeConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return *ps_; }
  const ParamStore<T>& params() const noexcept { return *ps_; }

  // Multiplier mapping posterior means to unit-variance diffusion latents.
  T latent_scale() const noexcept { return latent_scale_; }
  void set_latent_scale(T s);

  // Decoder shortcut shapes for an image of size h x w, ordered by decoder stage.
  std::vector<Shape> shortcut_shapes(int n, int h, int w) const;

  // Posterior mean and log-variance, concatenated: (N, 2c, H/f, W/f).
  Var encode_moments(Graph<T>& g, Var img) const;
  // Decodes an unscaled latent; shortcuts are added before each upsampling.
  Var decode(Graph<T>& g, Var z, const std::vector<Var>* shortcuts = nullptr) const;

  // Deterministic scaled latent (posterior mean times latent_scale).
  Tensor<T> encode(const Tensor<T>& img) const;
  // Raw decoder output for a scaled latent (not clipped).
  Tensor<T> decode(const Tensor<T>& latent, const std::vector<Tensor<T>>* shortcuts = nullptr) const;

  void check_image_shape(const Shape& s) const;

 private:
  VaeConfig cfg_;
  std::unique_ptr<ParamStore<T>> ps_;
  T latent_scale_ = T(1);
  VaeEncoder<T> enc_;
  nn::GroupNorm<T> enc_norm_;
  nn::Conv2d<T> enc_out_;
  nn::Conv2d<T> dec_in_;
  std::vector<nn::ResBlock<T>> dec_blocks_;  // indexed by level, coarsest used first
  std::vector<nn::Conv2d<T>> dec_up_;
  nn::GroupNorm<T> dec_norm_;
  nn::Conv2d<T> dec_out_;
};

// Image-level helpers around the float VAE.
Tensor<float> vae_encode(const VAE<float>& vae, const ImageRGB& img);
ImageRGB vae_decode(const VAE<float>& vae, const Tensor<float>& latent,
                    const std::vector<Tensor<float>>* shortcuts = nullptr);

}  // namespace expfuse::genprior
