#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "expfuse/nn/ops.hpp"

namespace expfuse::nn {

using Rng = std::mt19937_64;

template <class T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (T& v : t.data()) v = static_cast<T>(d(rng));
}

// Groups for GroupNorm: the largest of {16, 8, 4, 2} leaving >= 2 channels per group.
inline int norm_groups(int channels) {
  for (int g : {16, 8, 4, 2})
    if (channels % g == 0 && channels / g >= 2) return g;
  return 1;
}

template <class T>
struct Conv2d {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  int stride = 1;
  int pad = 0;

  // zero_init gives the "zero convolution" used by control branches.
  static Conv2d make(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
                     Rng& rng, bool zero_init = false, double gain = 1.0) {
    require(cin >= 1 && cout >= 1 && k >= 1, "Conv2d: bad dimensions for " + name);
    Conv2d c;
    c.w = &ps.add(name + ".w", Shape{cout, cin, k, k});
    c.b = &ps.add(name + ".b", Shape{1, cout, 1, 1});
    c.stride = stride;
    c.pad = pad;
    if (!zero_init) init_normal(c.w->value, gain / std::sqrt(static_cast<double>(cin * k * k)), rng);
    return c;
  }

  Var operator()(Graph<T>& g, Var x) const { return conv2d(g, x, g.param(*w), g.param(*b), stride, pad); }
  int out_channels() const { return w->value.shape().n; }
};

template <class T>
struct DepthwiseConv {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  static DepthwiseConv make(ParamStore<T>& ps, const std::string& name, int channels, Rng& rng) {
    DepthwiseConv c;
    c.w = &ps.add(name + ".w", Shape{channels, 1, 3, 3});
    c.b = &ps.add(name + ".b", Shape{1, channels, 1, 1});
    init_normal(c.w->value, 1.0 / 3.0, rng);
    return c;
  }

  Var operator()(Graph<T>& g, Var x) const { return depthwise_conv2d(g, x, g.param(*w), g.param(*b), 1); }
};

template <class T>
struct GroupNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  int groups = 1;

  static GroupNorm make(ParamStore<T>& ps, const std::string& name, int channels) {
    GroupNorm n;
    n.gamma = &ps.add(name + ".gamma", Shape{1, channels, 1, 1});
    n.beta = &ps.add(name + ".beta", Shape{1, channels, 1, 1});
    n.gamma->value.fill(T(1));
    n.groups = norm_groups(channels);
    return n;
  }

  Var operator()(Graph<T>& g, Var x) const { return group_norm(g, x, g.param(*gamma), g.param(*beta), groups); }
};

template <class T>
struct ChannelLayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  static ChannelLayerNorm make(ParamStore<T>& ps, const std::string& name, int channels) {
    ChannelLayerNorm n;
    n.gamma = &ps.add(name + ".gamma", Shape{1, channels, 1, 1});
    n.beta = &ps.add(name + ".beta", Shape{1, channels, 1, 1});
    n.gamma->value.fill(T(1));
    return n;
  }

  Var operator()(Graph<T>& g, Var x) const { return layer_norm_channels(g, x, g.param(*gamma), g.param(*beta)); }
};

// GroupNorm-SiLU-conv residual block with an optional per-sample embedding
// added between the two convolutions.
template <class T>
struct ResBlock {
  GroupNorm<T> n1, n2;
  Conv2d<T> c1, c2, emb, skip;
  bool has_emb = false;
  bool has_skip = false;

  static ResBlock make(ParamStore<T>& ps, const std::string& name, int cin, int cout, int emb_dim, Rng& rng) {
    ResBlock r;
    r.n1 = GroupNorm<T>::make(ps, name + ".n1", cin);
    r.c1 = Conv2d<T>::make(ps, name + ".c1", cin, cout, 3, 1, 1, rng);
    if (emb_dim > 0) {
      r.has_emb = true;
      r.emb = Conv2d<T>::make(ps, name + ".emb", emb_dim, cout, 1, 1, 0, rng);
    }
    r.n2 = GroupNorm<T>::make(ps, name + ".n2", cout);
    r.c2 = Conv2d<T>::make(ps, name + ".c2", cout, cout, 3, 1, 1, rng, false, 0.5);
    if (cin != cout) {
      r.has_skip = true;
      r.skip = Conv2d<T>::make(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
    }
    return r;
  }

  Var operator()(Graph<T>& g, Var x, Var temb = Var{}) const {
    Var h = c1(g, silu(g, n1(g, x)));
    if (has_emb) {
      require(temb.valid(), "ResBlock: embedding required");
      h = add_channel(g, h, emb(g, silu(g, temb)));
    }
    h = c2(g, silu(g, n2(g, h)));
    return add(g, has_skip ? skip(g, x) : x, h);
  }
};

// Transposed (channel) attention: softmax over the C x C matrix of
// L2-normalised query/key channel correlations, divided by a temperature.
template <class T>
Var channel_attention(Graph<T>& g, Var q, Var k, Var v, Var tau) {
  Var qn = l2_normalize_spatial(g, q);
  Var kn = l2_normalize_spatial(g, k);
  Var a = softmax_rows(g, div_by_scalar(g, channel_gram(g, qn, kn), tau));
  return channel_mix(g, a, v);
}

// Self-attention block used inside the U-Net at flagged levels.
template <class T>
struct SelfAttention {
  GroupNorm<T> norm;
  Conv2d<T> qkv, proj;
  DepthwiseConv<T> dw;
  Parameter<T>* tau = nullptr;
  int channels = 0;

  static SelfAttention make(ParamStore<T>& ps, const std::string& name, int c, Rng& rng) {
    SelfAttention a;
    a.channels = c;
    a.norm = GroupNorm<T>::make(ps, name + ".norm", c);
    a.qkv = Conv2d<T>::make(ps, name + ".qkv", c, 3 * c, 1, 1, 0, rng);
    a.dw = DepthwiseConv<T>::make(ps, name + ".dw", 3 * c, rng);
    a.proj = Conv2d<T>::make(ps, name + ".proj", c, c, 1, 1, 0, rng, false, 0.5);
    a.tau = &ps.add(name + ".tau", Shape{1, 1, 1, 1});
    a.tau->value.fill(T(1));
    return a;
  }

  Var operator()(Graph<T>& g, Var x) const {
    Var h = dw(g, qkv(g, norm(g, x)));
    Var q = slice_channels(g, h, 0, channels);
    Var k = slice_channels(g, h, channels, channels);
    Var v = slice_channels(g, h, 2 * channels, channels);
    return add(g, x, proj(g, channel_attention(g, q, k, v, g.param(*tau))));
  }
};

// Sinusoidal embedding of integer timesteps, shape (N, dim, 1, 1).
template <class T>
Tensor<T> timestep_embedding(const std::vector<int>& steps, int dim) {
  require(dim >= 2 && dim % 2 == 0, "timestep_embedding: dim must be even");
  Tensor<T> out(Shape{static_cast<int>(steps.size()), dim, 1, 1});
  const int half = dim / 2;
  for (std::size_t n = 0; n < steps.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = steps[n] * freq;
      out[n * dim + i] = static_cast<T>(std::sin(arg));
      out[n * dim + half + i] = static_cast<T>(std::cos(arg));
    }
  return out;
}

// Copies every parameter of `src` whose name starts with `src_prefix` into
// `dst` under `dst_prefix` (shapes must agree).
template <class T>
void copy_params(const ParamStore<T>& src, const std::string& src_prefix, ParamStore<T>& dst,
                 const std::string& dst_prefix) {
  std::size_t copied = 0;
  for (const auto& [name, p] : src) {
    if (name.rfind(src_prefix, 0) != 0) continue;
    Parameter<T>& d = dst.at(dst_prefix + name.substr(src_prefix.size()));
    require_shape(d.value, p.value.shape(), "copy_params " + name);
    d.value = p.value;
    ++copied;
  }
  require(copied > 0, "copy_params: no parameters under prefix " + src_prefix);
}

}  // namespace expfuse::nn
