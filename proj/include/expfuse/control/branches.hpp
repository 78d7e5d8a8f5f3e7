#pragma once

#include <memory>
#include <vector>

#include "expfuse/control/decompose.hpp"
#include "expfuse/genprior/unet.hpp"
#include "expfuse/genprior/vae.hpp"

namespace expfuse::control {

using nn::Graph;
using nn::ParamStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

// Fuses base-image features with structure/chroma guidance features:
//   X_ue = Conv1x1([X_S, X_C]);  Q = DW_q(LN(X_oe));  K = DW_k(LN(X_ue));  V = DW_v(LN(X_ue))
//   X_out = X_oe + Proj(Softmax(norm(Q) norm(K)^T / tau) V)
// with channel (C x C) attention and a zero-initialised projection.
template <class T>
struct CrossAttention {
  nn::Conv2d<T> reduce;
  nn::ChannelLayerNorm<T> ln_oe, ln_ue;
  nn::DepthwiseConv<T> dw_q, dw_k, dw_v;
  nn::Conv2d<T> proj;
  nn::Parameter<T>* tau = nullptr;
  int channels = 0;

  static CrossAttention make(ParamStore<T>& ps, const std::string& prefix, int channels, int s_channels,
                             int c_channels, nn::Rng& rng);

  Var operator()(Graph<T>& g, Var x_oe, Var x_s, Var x_c) const;
};

// Plain strided convolution stack. The first `stem_downs` stride-2 stages run
// before the first emitted scale; every later scale halves the resolution.
template <class T>
struct GuidanceExtractor {
  std::vector<nn::Conv2d<T>> stem;
  std::vector<nn::Conv2d<T>> scales;

  static GuidanceExtractor make(ParamStore<T>& ps, const std::string& prefix, int in_channels, int stem_downs,
                                const std::vector<int>& widths, nn::Rng& rng);

  std::vector<Var> operator()(Graph<T>& g, Var x) const;
};

// Decompose-and-fuse control branch: a trainable copy of the denoiser's
// encoder and middle block, fused with guidance features at every level and
// emitting one zero-convolved residual per level plus the middle block.
template <class T>
class DFCB {
 public:
  DFCB(const genprior::BackboneConfig& cfg, std::uint64_t seed);

  const genprior::BackboneConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return *ps_; }
  const ParamStore<T>& params() const noexcept { return *ps_; }

  // Copies the denoiser's encoder and middle block into the main extractor.
  void init_from(const genprior::UNet<T>& unet);

  // zt, y_oe: (N, c, h, w) latents; structure/chroma: guidance tensors at image size 4h x 4w.
  std::vector<Var> forward(Graph<T>& g, Var zt, Var y_oe, Var structure, Var chroma, const std::vector<int>& steps) const;

  genprior::ControlResiduals<T> residuals(const Tensor<T>& zt, const Tensor<T>& y_oe, const Tensor<T>& structure,
                                          const Tensor<T>& chroma, const std::vector<int>& steps) const;

  // Latent-to-image factor the guidance extractor assumes.
  static constexpr int kImageFactor = 4;

 private:
  genprior::BackboneConfig cfg_;
  std::unique_ptr<ParamStore<T>> ps_;
  genprior::UNetEncoder<T> main_;
  nn::Conv2d<T> cond_embed_, cond_zero_;
  GuidanceExtractor<T> ge_s_, ge_c_;
  std::vector<CrossAttention<T>> fuse_;
  std::vector<nn::Conv2d<T>> zero_;
};

// Fidelity control branch: a VAE-encoder-shaped extractor over the
// over-exposed image, fused with guidance features at every downsampled level,
// emitting zero-convolved shortcuts for the VAE decoder (coarsest first).
template <class T>
class FCB {
 public:
  FCB(const genprior::VaeConfig& cfg, std::uint64_t seed);

  const genprior::VaeConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return *ps_; }
  const ParamStore<T>& params() const noexcept { return *ps_; }

  // Copies the VAE encoder trunk into the main extractor.
  void init_from(const genprior::VAE<T>& vae);

  std::vector<Var> forward(Graph<T>& g, Var oe, Var structure, Var chroma) const;

  std::vector<Tensor<T>> shortcuts(const Tensor<T>& oe, const Tensor<T>& structure, const Tensor<T>& chroma) const;

 private:
  genprior::VaeConfig cfg_;
  std::unique_ptr<ParamStore<T>> ps_;
  genprior::VaeEncoder<T> main_;
  GuidanceExtractor<T> ge_s_, ge_c_;
  std::vector<CrossAttention<T>> fuse_;  // index k fuses encoder level k + 1
  std::vector<nn::Conv2d<T>> zero_;
};

}  // namespace expfuse::control
