#include "expfuse/genprior/unet.hpp"

namespace expfuse::genprior {

using namespace nn;

void BackboneConfig::validate() const {
  require(levels() >= 2, "BackboneConfig: at least 2 levels required");
  require(base >= 1 && latent_channels >= 1, "BackboneConfig: widths must be positive");
  for (int m : mult) require(m >= 1, "BackboneConfig: channel multipliers must be positive");
  require(attention.size() == mult.size(), "BackboneConfig: one attention flag per level");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"latent_channels", latent_channels}, {"base", base}, {"mult", mult}, {"attention", attention}, {"seed", seed}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.latent_channels = j.at("latent_channels").get<int>();
  c.base = j.at("base").get<int>();
  c.mult = j.at("mult").get<std::vector<int>>();
  c.attention = j.at("attention").get<std::vector<bool>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

template <class T>
UNetEncoder<T> UNetEncoder<T>::make(ParamStore<T>& ps, const std::string& prefix, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  UNetEncoder e;
  e.base = cfg.base;
  const int ed = cfg.emb_dim();
  e.temb1 = Conv2d<T>::make(ps, prefix + "temb1", cfg.base, ed, 1, 1, 0, rng);
  e.temb2 = Conv2d<T>::make(ps, prefix + "temb2", ed, ed, 1, 1, 0, rng);
  e.conv_in = Conv2d<T>::make(ps, prefix + "conv_in", cfg.latent_channels, cfg.width(0), 3, 1, 1, rng);
  int prev = cfg.width(0);
  for (int i = 0; i < cfg.levels(); ++i) {
    const std::string p = prefix + "level" + std::to_string(i);
    e.blocks.push_back(ResBlock<T>::make(ps, p + ".res", prev, cfg.width(i), ed, rng));
    e.has_attn.push_back(cfg.attention[i]);
    e.attn.push_back(cfg.attention[i] ? SelfAttention<T>::make(ps, p + ".attn", cfg.width(i), rng) : SelfAttention<T>{});
    prev = cfg.width(i);
    if (i + 1 < cfg.levels()) e.down.push_back(Conv2d<T>::make(ps, p + ".down", prev, prev, 3, 2, 1, rng));
  }
  e.mid1 = ResBlock<T>::make(ps, prefix + "mid.res1", prev, prev, ed, rng);
  e.mid_attn = SelfAttention<T>::make(ps, prefix + "mid.attn", prev, rng);
  e.mid2 = ResBlock<T>::make(ps, prefix + "mid.res2", prev, prev, ed, rng);
  return e;
}

template <class T>
Var UNetEncoder<T>::time_embedding(Graph<T>& g, const std::vector<int>& steps) const {
  Var s = g.constant(timestep_embedding<T>(steps, base));
  return temb2(g, silu(g, temb1(g, s)));
}

template <class T>
Var UNetEncoder<T>::level(Graph<T>& g, int i, Var h, Var temb) const {
  h = blocks.at(i)(g, h, temb);
  if (has_attn[i]) h = attn[i](g, h);
  return h;
}

template <class T>
Var UNetEncoder<T>::middle(Graph<T>& g, Var h, Var temb) const {
  return mid2(g, mid_attn(g, mid1(g, h, temb)), temb);
}

template <class T>
UNet<T>::UNet(BackboneConfig cfg) : cfg_(std::move(cfg)), ps_(std::make_unique<ParamStore<T>>()) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  enc_ = UNetEncoder<T>::make(*ps_, "enc.", cfg_, rng);
  const int L = cfg_.levels();
  dec_.resize(L);
  dec_attn_.resize(L);
  up_.resize(L);
  for (int i = L - 1; i >= 0; --i) {
    const std::string p = "dec.level" + std::to_string(i);
    const int below = (i == L - 1) ? cfg_.width(L - 1) : cfg_.width(i + 1);
    dec_[i] = ResBlock<T>::make(*ps_, p + ".res", below + cfg_.width(i), cfg_.width(i), cfg_.emb_dim(), rng);
    if (cfg_.attention[i]) dec_attn_[i] = SelfAttention<T>::make(*ps_, p + ".attn", cfg_.width(i), rng);
    if (i > 0) up_[i] = Conv2d<T>::make(*ps_, p + ".up", cfg_.width(i), cfg_.width(i), 3, 1, 1, rng);
  }
  out_norm_ = GroupNorm<T>::make(*ps_, "out.norm", cfg_.width(0));
  out_ = Conv2d<T>::make(*ps_, "out.conv", cfg_.width(0), cfg_.latent_channels, 3, 1, 1, rng, false, 0.1);
}

template <class T>
std::vector<Shape> UNet<T>::residual_shapes(int n, int h, int w) const {
  std::vector<Shape> out;
  for (int i = 0; i < cfg_.levels(); ++i) out.push_back(Shape{n, cfg_.width(i), h >> i, w >> i});
  out.push_back(Shape{n, cfg_.width(cfg_.levels() - 1), h >> (cfg_.levels() - 1), w >> (cfg_.levels() - 1)});
  return out;
}

template <class T>
Var UNet<T>::forward(Graph<T>& g, Var zt, const std::vector<int>& steps, const std::vector<Var>* residuals) const {
  const Shape zs = g.shape(zt);
  if (zs.c != cfg_.latent_channels || zs.h % cfg_.divisor() != 0 || zs.w % cfg_.divisor() != 0)
    throw ValidationError("UNet: latent " + zs.str() + " incompatible with backbone config");
  require(static_cast<int>(steps.size()) == zs.n, "UNet: one timestep per sample required");
  const int L = cfg_.levels();
  if (residuals && !residuals->empty()) {
    require(static_cast<int>(residuals->size()) == L + 1,
            "UNet: expected " + std::to_string(L + 1) + " residuals, got " + std::to_string(residuals->size()));
    const auto shapes = residual_shapes(zs.n, zs.h, zs.w);
    for (int i = 0; i <= L; ++i)
      if (g.shape((*residuals)[i]) != shapes[i])
        throw ValidationError("UNet: residual " + std::to_string(i) + " has shape " + g.shape((*residuals)[i]).str() +
                              ", expected " + shapes[i].str());
  } else {
    residuals = nullptr;
  }

  Var temb = enc_.time_embedding(g, steps);
  Var h = enc_.stem(g, zt);
  std::vector<Var> skips;
  for (int i = 0; i < L; ++i) {
    h = enc_.level(g, i, h, temb);
    skips.push_back(h);
    if (i + 1 < L) h = enc_.downsample(g, i, h);
  }
  h = enc_.middle(g, h, temb);
  if (residuals) h = add(g, h, (*residuals)[L]);
  for (int i = L - 1; i >= 0; --i) {
    Var skip = residuals ? add(g, skips[i], (*residuals)[i]) : skips[i];
    h = dec_[i](g, concat_channels(g, h, skip), temb);
    if (cfg_.attention[i]) h = dec_attn_[i](g, h);
    if (i > 0) h = up_[i](g, upsample_nearest2x(g, h));
  }
  return out_(g, silu(g, out_norm_(g, h)));
}

template <class T>
Tensor<T> UNet<T>::predict(const Tensor<T>& zt, const std::vector<int>& steps, const ControlResiduals<T>* residuals) const {
  Graph<T> g(false);
  std::vector<Var> res;
  if (residuals)
    for (const auto& r : *residuals) res.push_back(g.constant(r));
  return g.value(forward(g, g.constant(zt), steps, residuals ? &res : nullptr));
}

template struct UNetEncoder<float>;
template struct UNetEncoder<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace expfuse::genprior
