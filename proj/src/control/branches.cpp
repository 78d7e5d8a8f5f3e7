#include "expfuse/control/branches.hpp"

namespace expfuse::control {

using namespace nn;

template <class T>
CrossAttention<T> CrossAttention<T>::make(ParamStore<T>& ps, const std::string& prefix, int channels, int s_channels,
                                          int c_channels, Rng& rng) {
  CrossAttention a;
  a.channels = channels;
  a.reduce = Conv2d<T>::make(ps, prefix + "reduce", s_channels + c_channels, channels, 1, 1, 0, rng);
  a.ln_oe = ChannelLayerNorm<T>::make(ps, prefix + "ln_oe", channels);
  a.ln_ue = ChannelLayerNorm<T>::make(ps, prefix + "ln_ue", channels);
  a.dw_q = DepthwiseConv<T>::make(ps, prefix + "dw_q", channels, rng);
  a.dw_k = DepthwiseConv<T>::make(ps, prefix + "dw_k", channels, rng);
  a.dw_v = DepthwiseConv<T>::make(ps, prefix + "dw_v", channels, rng);
  a.proj = Conv2d<T>::make(ps, prefix + "proj", channels, channels, 1, 1, 0, rng, /*zero_init=*/true);
  a.tau = &ps.add(prefix + "tau", Shape{1, 1, 1, 1});
  a.tau->value.fill(T(1));
  return a;
}

template <class T>
Var CrossAttention<T>::operator()(Graph<T>& g, Var x_oe, Var x_s, Var x_c) const {
  const Shape so = g.shape(x_oe);
  for (Var v : {x_s, x_c}) {
    const Shape s = g.shape(v);
    if (s.n != so.n || s.h != so.h || s.w != so.w)
      throw ValidationError("cross attention: guidance " + s.str() + " does not match base features " + so.str());
  }
  require(so.c == channels, "cross attention: base features have " + std::to_string(so.c) + " channels, expected " +
                                std::to_string(channels));
  Var x_ue = reduce(g, concat_channels(g, x_s, x_c));
  Var q = dw_q(g, ln_oe(g, x_oe));
  Var ue = ln_ue(g, x_ue);
  Var k = dw_k(g, ue);
  Var v = dw_v(g, ue);
  return add(g, x_oe, proj(g, channel_attention(g, q, k, v, g.param(*tau))));
}

template <class T>
GuidanceExtractor<T> GuidanceExtractor<T>::make(ParamStore<T>& ps, const std::string& prefix, int in_channels,
                                                int stem_downs, const std::vector<int>& widths, Rng& rng) {
  require(!widths.empty(), "guidance extractor needs at least one scale");
  GuidanceExtractor e;
  constexpr int kStem = 16;
  e.stem.push_back(Conv2d<T>::make(ps, prefix + "stem0", in_channels, kStem, 3, 1, 1, rng));
  int prev = kStem;
  for (int i = 0; i < stem_downs; ++i) {
    e.stem.push_back(Conv2d<T>::make(ps, prefix + "stem" + std::to_string(i + 1), prev, 2 * kStem, 3, 2, 1, rng));
    prev = 2 * kStem;
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    e.scales.push_back(Conv2d<T>::make(ps, prefix + "scale" + std::to_string(i), prev, widths[i], 3, 2, 1, rng));
    prev = widths[i];
  }
  return e;
}

template <class T>
std::vector<Var> GuidanceExtractor<T>::operator()(Graph<T>& g, Var x) const {
  Var h = x;
  for (const auto& c : stem) h = silu(g, c(g, h));
  std::vector<Var> out;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    Var f = scales[i](g, i == 0 ? h : silu(g, out.back()));
    out.push_back(f);
  }
  return out;
}

namespace {

std::vector<int> half_widths(const std::vector<int>& w) {
  std::vector<int> out;
  for (int c : w) out.push_back(std::max(1, c / 2));
  return out;
}

void check_guidance(const Shape& st, const Shape& ch, int n, int h, int w) {
  if (st != Shape{n, 2, h, w} || ch != Shape{n, 3, h, w})
    throw ValidationError("guidance tensors " + st.str() + ", " + ch.str() + " do not match image size " +
                          std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

template <class T>
DFCB<T>::DFCB(const genprior::BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg), ps_(std::make_unique<ParamStore<T>>()) {
  cfg_.validate();
  Rng rng(seed);
  const int L = cfg_.levels();
  main_ = genprior::UNetEncoder<T>::make(*ps_, "main.", cfg_, rng);
  constexpr int kEmbed = 32;
  cond_embed_ = Conv2d<T>::make(*ps_, "cond.embed", cfg_.latent_channels, kEmbed, 3, 1, 1, rng);
  cond_zero_ = Conv2d<T>::make(*ps_, "cond.zero", kEmbed, cfg_.latent_channels, 1, 1, 0, rng, true);
  std::vector<int> widths;
  for (int i = 0; i < L; ++i) widths.push_back(cfg_.width(i));
  const auto gw = half_widths(widths);
  ge_s_ = GuidanceExtractor<T>::make(*ps_, "ge_s.", 2, 1, gw, rng);
  ge_c_ = GuidanceExtractor<T>::make(*ps_, "ge_c.", 3, 1, gw, rng);
  for (int i = 0; i < L; ++i) {
    fuse_.push_back(CrossAttention<T>::make(*ps_, "fuse" + std::to_string(i) + ".", widths[i], gw[i], gw[i], rng));
    zero_.push_back(Conv2d<T>::make(*ps_, "zero" + std::to_string(i), widths[i], widths[i], 1, 1, 0, rng, true));
  }
  zero_.push_back(Conv2d<T>::make(*ps_, "zero_mid", widths[L - 1], widths[L - 1], 1, 1, 0, rng, true));
}

template <class T>
void DFCB<T>::init_from(const genprior::UNet<T>& unet) {
  require(unet.config().to_json() == cfg_.to_json(), "DFCB: backbone config mismatch");
  copy_params(unet.params(), "enc.", *ps_, "main.");
}

template <class T>
std::vector<Var> DFCB<T>::forward(Graph<T>& g, Var zt, Var y_oe, Var structure, Var chroma,
                                  const std::vector<int>& steps) const {
  const Shape zs = g.shape(zt);
  if (g.shape(y_oe) != zs) throw ValidationError("DFCB: y_oe " + g.shape(y_oe).str() + " vs z_t " + zs.str());
  if (zs.c != cfg_.latent_channels || zs.h % cfg_.divisor() != 0 || zs.w % cfg_.divisor() != 0)
    throw ValidationError("DFCB: latent " + zs.str() + " incompatible with backbone config");
  check_guidance(g.shape(structure), g.shape(chroma), zs.n, zs.h * kImageFactor, zs.w * kImageFactor);
  require(static_cast<int>(steps.size()) == zs.n, "DFCB: one timestep per sample required");

  const int L = cfg_.levels();
  Var temb = main_.time_embedding(g, steps);
  Var h = main_.stem(g, add(g, zt, cond_zero_(g, silu(g, cond_embed_(g, y_oe)))));
  const auto gs = ge_s_(g, structure);
  const auto gc = ge_c_(g, chroma);
  std::vector<Var> res;
  for (int i = 0; i < L; ++i) {
    h = main_.level(g, i, h, temb);
    h = fuse_[i](g, h, gs[i], gc[i]);
    res.push_back(zero_[i](g, h));
    if (i + 1 < L) h = main_.downsample(g, i, h);
  }
  h = main_.middle(g, h, temb);
  res.push_back(zero_[L](g, h));
  return res;
}

template <class T>
genprior::ControlResiduals<T> DFCB<T>::residuals(const Tensor<T>& zt, const Tensor<T>& y_oe, const Tensor<T>& structure,
                                                 const Tensor<T>& chroma, const std::vector<int>& steps) const {
  Graph<T> g(false);
  auto vars = forward(g, g.constant(zt), g.constant(y_oe), g.constant(structure), g.constant(chroma), steps);
  genprior::ControlResiduals<T> out;
  for (Var v : vars) out.push_back(g.value(v));
  return out;
}

template <class T>
FCB<T>::FCB(const genprior::VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg), ps_(std::make_unique<ParamStore<T>>()) {
  cfg_.validate();
  Rng rng(seed);
  const int L = cfg_.levels();
  main_ = genprior::VaeEncoder<T>::make(*ps_, "main.", cfg_, 3, rng);
  const std::vector<int> fused(cfg_.widths.begin() + 1, cfg_.widths.end());
  const auto gw = half_widths(fused);
  ge_s_ = GuidanceExtractor<T>::make(*ps_, "ge_s.", 2, 0, gw, rng);
  ge_c_ = GuidanceExtractor<T>::make(*ps_, "ge_c.", 3, 0, gw, rng);
  for (int k = 1; k < L; ++k) {
    const std::string p = std::to_string(k);
    fuse_.push_back(CrossAttention<T>::make(*ps_, "fuse" + p + ".", cfg_.widths[k], gw[k - 1], gw[k - 1], rng));
    zero_.push_back(Conv2d<T>::make(*ps_, "zero" + p, cfg_.widths[k], cfg_.widths[k], 1, 1, 0, rng, true));
  }
}

template <class T>
void FCB<T>::init_from(const genprior::VAE<T>& vae) {
  require(vae.config().widths == cfg_.widths, "FCB: VAE config mismatch");
  copy_params(vae.params(), "enc.conv_in", *ps_, "main.conv_in");
  copy_params(vae.params(), "enc.level", *ps_, "main.level");
}

template <class T>
std::vector<Var> FCB<T>::forward(Graph<T>& g, Var oe, Var structure, Var chroma) const {
  const Shape s = g.shape(oe);
  const int f = cfg_.factor();
  if (s.c != 3 || s.h % f != 0 || s.w % f != 0 || s.h < f || s.w < f)
    throw ValidationError("FCB: image " + s.str() + " must be RGB with sides divisible by " + std::to_string(f));
  check_guidance(g.shape(structure), g.shape(chroma), s.n, s.h, s.w);
  const int L = cfg_.levels();
  const auto gs = ge_s_(g, structure);
  const auto gc = ge_c_(g, chroma);
  std::vector<Var> by_level(L);
  Var h = main_.conv_in(g, oe);
  for (int i = 0; i < L; ++i) {
    h = main_.blocks[i](g, h);
    if (i >= 1) {
      h = fuse_[i - 1](g, h, gs[i - 1], gc[i - 1]);
      by_level[i] = zero_[i - 1](g, h);
    }
    if (i + 1 < L) h = main_.down[i](g, h);
  }
  return std::vector<Var>(by_level.rbegin(), by_level.rend() - 1);
}

template <class T>
std::vector<Tensor<T>> FCB<T>::shortcuts(const Tensor<T>& oe, const Tensor<T>& structure, const Tensor<T>& chroma) const {
  Graph<T> g(false);
  auto vars = forward(g, g.constant(oe), g.constant(structure), g.constant(chroma));
  std::vector<Tensor<T>> out;
  for (Var v : vars) out.push_back(g.value(v));
  return out;
}

template struct CrossAttention<float>;
template struct CrossAttention<double>;
template struct GuidanceExtractor<float>;
template struct GuidanceExtractor<double>;
template class DFCB<float>;
template class DFCB<double>;
template class FCB<float>;
template class FCB<double>;

}  // namespace expfuse::control
