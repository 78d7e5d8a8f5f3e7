#include "expfuse/genprior/vae.hpp"

#include <cmath>

#include "expfuse/nn/image_tensor.hpp"

namespace expfuse::genprior {

using namespace nn;

void VaeConfig::validate() const {
  require(levels() >= 2, "VaeConfig: at least 2 levels required");
  require(latent_channels >= 1, "VaeConfig: latent channels must be positive");
  for (int w : widths) require(w >= 1, "VaeConfig: widths must be positive");
}

nlohmann::json VaeConfig::to_json() const {
  return {{"widths", widths}, {"latent_channels", latent_channels}, {"seed", seed}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.widths = j.at("widths").get<std::vector<int>>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

template <class T>
VaeEncoder<T> VaeEncoder<T>::make(ParamStore<T>& ps, const std::string& prefix, const VaeConfig& cfg, int in_channels,
                                  Rng& rng) {
  VaeEncoder e;
  e.conv_in = Conv2d<T>::make(ps, prefix + "conv_in", in_channels, cfg.widths[0], 3, 1, 1, rng);
  for (int i = 0; i < cfg.levels(); ++i) {
    const std::string p = prefix + "level" + std::to_string(i);
    e.blocks.push_back(ResBlock<T>::make(ps, p + ".res", cfg.widths[i], cfg.widths[i], 0, rng));
    if (i + 1 < cfg.levels())
      e.down.push_back(Conv2d<T>::make(ps, p + ".down", cfg.widths[i], cfg.widths[i + 1], 3, 2, 1, rng));
  }
  return e;
}

template <class T>
std::vector<Var> VaeEncoder<T>::features(Graph<T>& g, Var x) const {
  std::vector<Var> out;
  Var h = conv_in(g, x);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i](g, h);
    out.push_back(h);
    if (i < down.size()) h = down[i](g, h);
  }
  return out;
}

template <class T>
VAE<T>::VAE(VaeConfig cfg) : cfg_(std::move(cfg)), ps_(std::make_unique<ParamStore<T>>()) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int L = cfg_.levels();
  const int top = cfg_.widths[L - 1];
  enc_ = VaeEncoder<T>::make(*ps_, "enc.", cfg_, 3, rng);
  enc_norm_ = GroupNorm<T>::make(*ps_, "enc.out.norm", top);
  enc_out_ = Conv2d<T>::make(*ps_, "enc.out.conv", top, 2 * cfg_.latent_channels, 3, 1, 1, rng);
  dec_in_ = Conv2d<T>::make(*ps_, "dec.conv_in", cfg_.latent_channels, top, 3, 1, 1, rng);
  dec_blocks_.resize(L);
  dec_up_.resize(L);
  for (int i = L - 1; i >= 0; --i) {
    const std::string p = "dec.level" + std::to_string(i);
    dec_blocks_[i] = ResBlock<T>::make(*ps_, p + ".res", cfg_.widths[i], cfg_.widths[i], 0, rng);
    if (i > 0) dec_up_[i] = Conv2d<T>::make(*ps_, p + ".up", cfg_.widths[i], cfg_.widths[i - 1], 3, 1, 1, rng);
  }
  dec_norm_ = GroupNorm<T>::make(*ps_, "dec.out.norm", cfg_.widths[0]);
  dec_out_ = Conv2d<T>::make(*ps_, "dec.out.conv", cfg_.widths[0], 3, 3, 1, 1, rng);
}

template <class T>
void VAE<T>::set_latent_scale(T s) {
  if (!(s > T(0)) || !std::isfinite(static_cast<double>(s))) throw NumericError("VAE: latent scale must be positive");
  latent_scale_ = s;
}

template <class T>
void VAE<T>::check_image_shape(const Shape& s) const {
  if (s.c != 3 || s.h % cfg_.factor() != 0 || s.w % cfg_.factor() != 0 || s.h < cfg_.factor() || s.w < cfg_.factor())
    throw ValidationError("VAE: image " + s.str() + " must be RGB with sides divisible by " +
                          std::to_string(cfg_.factor()));
}

template <class T>
std::vector<Shape> VAE<T>::shortcut_shapes(int n, int h, int w) const {
  std::vector<Shape> out;
  for (int i = cfg_.levels() - 1; i >= 1; --i) out.push_back(Shape{n, cfg_.widths[i], h >> i, w >> i});
  return out;
}

template <class T>
Var VAE<T>::encode_moments(Graph<T>& g, Var img) const {
  check_image_shape(g.shape(img));
  Var h = enc_.features(g, img).back();
  return enc_out_(g, silu(g, enc_norm_(g, h)));
}

template <class T>
Var VAE<T>::decode(Graph<T>& g, Var z, const std::vector<Var>* shortcuts) const {
  const Shape zs = g.shape(z);
  require(zs.c == cfg_.latent_channels, "VAE: latent has " + std::to_string(zs.c) + " channels");
  const int L = cfg_.levels();
  std::vector<Shape> expected;
  if (shortcuts && !shortcuts->empty()) {
    expected = shortcut_shapes(zs.n, zs.h * cfg_.factor(), zs.w * cfg_.factor());
    require(shortcuts->size() == expected.size(), "VAE: expected " + std::to_string(expected.size()) + " shortcuts");
    for (std::size_t i = 0; i < expected.size(); ++i)
      if (g.shape((*shortcuts)[i]) != expected[i])
        throw ValidationError("VAE: shortcut " + std::to_string(i) + " has shape " + g.shape((*shortcuts)[i]).str() +
                              ", expected " + expected[i].str());
  } else {
    shortcuts = nullptr;
  }
  Var h = dec_in_(g, z);
  for (int i = L - 1; i >= 0; --i) {
    h = dec_blocks_[i](g, h);
    if (i > 0) {
      if (shortcuts) h = add(g, h, (*shortcuts)[L - 1 - i]);
      h = dec_up_[i](g, upsample_nearest2x(g, h));
    }
  }
  return dec_out_(g, silu(g, dec_norm_(g, h)));
}

template <class T>
Tensor<T> VAE<T>::encode(const Tensor<T>& img) const {
  Graph<T> g(false);
  Var m = encode_moments(g, g.constant(img));
  Var mu = slice_channels(g, m, 0, cfg_.latent_channels);
  return g.value(scale(g, mu, latent_scale_));
}

template <class T>
Tensor<T> VAE<T>::decode(const Tensor<T>& latent, const std::vector<Tensor<T>>* shortcuts) const {
  Graph<T> g(false);
  std::vector<Var> sc;
  if (shortcuts)
    for (const auto& s : *shortcuts) sc.push_back(g.constant(s));
  Var z = scale(g, g.constant(latent), T(1) / latent_scale_);
  return g.value(decode(g, z, shortcuts ? &sc : nullptr));
}

template struct VaeEncoder<float>;
template struct VaeEncoder<double>;
template class VAE<float>;
template class VAE<double>;

Tensor<float> vae_encode(const VAE<float>& vae, const ImageRGB& img) {
  validate(img);
  return vae.encode(image_to_tensor(img));
}

ImageRGB vae_decode(const VAE<float>& vae, const Tensor<float>& latent, const std::vector<Tensor<float>>* shortcuts) {
  return tensor_to_image(vae.decode(latent, shortcuts));
}

}  // namespace expfuse::genprior
