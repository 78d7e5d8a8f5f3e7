#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "expfuse/nn/layers.hpp"
#include "json.hpp"

namespace expfuse::genprior {

using nn::Graph;
using nn::ParamStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

struct BackboneConfig {
  int latent_channels = 4;
  int base = 64;
  std::vector<int> mult{1, 2, 2};
  std::vector<bool> attention{false, false, true};
  std::uint64_t seed = 1;

  int levels() const { return static_cast<int>(mult.size()); }
  int width(int level) const { return base * mult.at(level); }
  int emb_dim() const { return 4 * base; }
  // Spatial divisor of the deepest level relative to the latent.
  int divisor() const { return 1 << (levels() - 1); }
  void validate() const;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

// Per-level additive conditioning: one tensor per encoder level (matching that
// level's skip) plus one for the middle block.
template <class T>
using ControlResiduals = std::vector<Tensor<T>>;

// Input stem, time embedding, encoder levels and middle block. The denoiser
// owns one; the decompose-and-fuse branch owns a trainable copy.
template <class T>
struct UNetEncoder {
  nn::Conv2d<T> conv_in, temb1, temb2;
  std::vector<nn::ResBlock<T>> blocks;
  std::vector<nn::SelfAttention<T>> attn;  // empty entries where unflagged
  std::vector<bool> has_attn;
  std::vector<nn::Conv2d<T>> down;
  nn::ResBlock<T> mid1, mid2;
  nn::SelfAttention<T> mid_attn;
  int base = 0;

  static UNetEncoder make(ParamStore<T>& ps, const std::string& prefix, const BackboneConfig& cfg, nn::Rng& rng);

  Var time_embedding(Graph<T>& g, const std::vector<int>& steps) const;
  Var stem(Graph<T>& g, Var x) const { return conv_in(g, x); }
  Var level(Graph<T>& g, int i, Var h, Var temb) const;
  Var downsample(Graph<T>& g, int i, Var h) const { return down.at(i)(g, h); }
  Var middle(Graph<T>& g, Var h, Var temb) const;
};

// Epsilon-prediction U-Net. Residuals are added to the skip features consumed
// by the decoder and to the middle-block output.
template <class T>
class UNet {
 public:
  explicit UNet(BackboneConfig cfg);

  const BackboneConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return *ps_; }
  const ParamStore<T>& params() const noexcept { return *ps_; }
  const UNetEncoder<T>& encoder() const noexcept { return enc_; }

  // Expected residual shapes for a latent of size h x w and batch n.
  std::vector<Shape> residual_shapes(int n, int h, int w) const;

  Var forward(Graph<T>& g, Var zt, const std::vector<int>& steps, const std::vector<Var>* residuals = nullptr) const;

  Tensor<T> predict(const Tensor<T>& zt, const std::vector<int>& steps,
                    const ControlResiduals<T>* residuals = nullptr) const;

 private:
  BackboneConfig cfg_;
  std::unique_ptr<ParamStore<T>> ps_;
  UNetEncoder<T> enc_;
  std::vector<nn::ResBlock<T>> dec_;
  std::vector<nn::SelfAttention<T>> dec_attn_;
  std::vector<nn::Conv2d<T>> up_;
  nn::GroupNorm<T> out_norm_;
  nn::Conv2d<T> out_;
};

}  // namespace expfuse::genprior
