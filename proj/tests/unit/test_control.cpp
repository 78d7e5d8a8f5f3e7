#include <cmath>
#include <random>

#include "doctest.h"
#include "expfuse/control/branches.hpp"
#include "expfuse/genprior/backbone.hpp"
#include "expfuse/imgcore/color.hpp"
#include "expfuse/nn/adam.hpp"
#include "expfuse/nn/image_tensor.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace expfuse;
using namespace expfuse::control;
using genprior::BackboneConfig;
using genprior::VaeConfig;

namespace {

BackboneConfig small_unet() {
  BackboneConfig c;
  c.base = 8;
  c.seed = 5;
  return c;
}

VaeConfig small_vae() {
  VaeConfig c;
  c.widths = {8, 8, 16};
  c.seed = 6;
  return c;
}

BinaryMask random_mask(int h, int w, std::uint64_t seed, double p = 0.3) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution d(p);
  BinaryMask m(h, w);
  for (auto& v : m.data()) v = d(rng) ? 1 : 0;
  return m;
}

// Mean and population standard deviation of `s` over unmasked pixels.
std::pair<double, double> valid_stats(const Plane& s, const BinaryMask& m) {
  double sum = 0, ss = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!m.data()[i]) sum += s.data()[i], ++n;
  const double mean = sum / n;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!m.data()[i]) ss += (s.data()[i] - mean) * (s.data()[i] - mean);
  return {mean, std::sqrt(ss / n)};
}

GuidanceTensors pack_tensors(int size, std::uint64_t seed, double mask_p = 0.3) {
  GuidancePack p = decompose(testing::textured_image(size, size, seed), random_mask(size, size, seed + 1, mask_p));
  return guidance_tensors(std::span(&p, 1));
}

double max_abs(const nn::Tensor<float>& t) {
  double m = 0;
  for (float v : t.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

}  // namespace

TEST_CASE("decompose: constant luminance triggers the variance guard") {
  ImageRGB img(16, 16, 0.4f);
  GuidancePack p = decompose(img, BinaryMask(16, 16));
  for (float v : p.s.data()) CHECK(v == 0.0f);
}

TEST_CASE("decompose: structure map is invariant to affine luminance changes") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Plane y = luminance(testing::textured_image(32, 32, seed));
    BinaryMask m = random_mask(32, 32, seed + 100);
    Plane ref = structure_map(y, m);
    for (float a : {0.25f, 4.0f})
      for (float b : {-0.1f, 0.1f}) {
        Plane ty = y;
        for (float& v : ty.data()) v = a * v + b;
        Plane s = structure_map(ty, m);
        double worst = 0;
        for (std::size_t i = 0; i < s.size(); ++i) worst = std::max(worst, std::abs(double(s.data()[i]) - ref.data()[i]));
        CHECK(worst <= 1e-5);
      }
  }
}

TEST_CASE("decompose: normalisation contract over valid pixels on random images") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ImageRGB img = testing::random_image(24, 24, seed);
    BinaryMask m = random_mask(24, 24, seed + 7, 0.4);
    GuidancePack p = decompose(img, m);
    auto [mean, sd] = valid_stats(p.s, m);
    CHECK(std::abs(mean) <= 1e-3);
    CHECK(std::abs(sd - 1.0) <= 1e-3);
    for (std::size_t i = 0; i < m.size(); ++i) {
      CHECK(p.u.data()[i] >= -0.5f);
      CHECK(p.u.data()[i] <= 0.5f);
      if (m.data()[i]) {
        CHECK(p.s.data()[i] == 0.0f);
        CHECK(p.u.data()[i] == 0.0f);
        CHECK(p.v.data()[i] == 0.0f);
      }
    }
  }
}

TEST_CASE("decompose: fully occluded guidance is all zero") {
  GuidancePack p = decompose(testing::random_image(8, 8, 3), BinaryMask(8, 8, 1));
  for (std::size_t i = 0; i < p.s.size(); ++i) {
    CHECK(p.s.data()[i] == 0.0f);
    CHECK(p.u.data()[i] == 0.0f);
    CHECK(p.v.data()[i] == 0.0f);
  }
  CHECK_THROWS_AS(decompose(ImageRGB(8, 8), BinaryMask(8, 9)), ValidationError);
}

TEST_CASE("guidance tensors carry S, UV and the valid channel") {
  ImageRGB img = testing::random_image(8, 8, 4);
  BinaryMask m = random_mask(8, 8, 5);
  GuidancePack p = decompose(img, m);
  GuidanceTensors t = guidance_tensors(std::span(&p, 1));
  CHECK(t.structure.shape() == nn::Shape{1, 2, 8, 8});
  CHECK(t.chroma.shape() == nn::Shape{1, 3, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(t.structure(0, 0, y, x) == p.s(y, x));
      CHECK(t.structure(0, 1, y, x) == (m(y, x) ? 0.0f : 1.0f));
      CHECK(t.chroma(0, 1, y, x) == p.v(y, x));
    }
}

TEST_CASE("guidance extractor emits latent-scale features with separate weights") {
  nn::ParamStore<float> ps;
  nn::Rng rng(1);
  auto ge_s = GuidanceExtractor<float>::make(ps, "s.", 2, 1, {8, 12, 12}, rng);
  auto ge_c = GuidanceExtractor<float>::make(ps, "c.", 3, 1, {8, 12, 12}, rng);
  GuidanceTensors t = pack_tensors(64, 9);
  nn::Graph<float> g(false);
  auto fs = ge_s(g, g.constant(t.structure));
  auto fc = ge_c(g, g.constant(t.chroma));
  REQUIRE(fs.size() == 3);
  CHECK(g.shape(fs[0]) == nn::Shape{1, 8, 16, 16});
  CHECK(g.shape(fs[1]) == nn::Shape{1, 12, 8, 8});
  CHECK(g.shape(fs[2]) == nn::Shape{1, 12, 4, 4});
  CHECK(g.shape(fc[2]) == nn::Shape{1, 12, 4, 4});
  CHECK(ps.at("s.stem0.w").value.shape().c == 2);
  CHECK(ps.at("c.stem0.w").value.shape().c == 3);

  // Zero input: features are the bias response, reproducible and finite.
  nn::Tensor<float> zero(nn::Shape{1, 2, 64, 64});
  auto z1 = ge_s(g, g.constant(zero));
  auto z2 = ge_s(g, g.constant(zero));
  CHECK(g.value(z1[2]) == g.value(z2[2]));
  for (float v : g.value(z1[2]).data()) CHECK(std::isfinite(v));

  // Doubling S changes values only.
  nn::Tensor<float> doubled = t.structure;
  for (std::size_t i = 0; i < doubled.shape().plane(); ++i) doubled[i] *= 2.0f;
  auto fd = ge_s(g, g.constant(doubled));
  CHECK(g.shape(fd[0]) == g.shape(fs[0]));
  CHECK(!(g.value(fd[0]) == g.value(fs[0])));
}

TEST_CASE("cross attention: identity at initialisation and shape contract") {
  for (int c : {3, 4, 8}) {
    nn::ParamStore<float> ps;
    nn::Rng rng(c);
    auto xa = CrossAttention<float>::make(ps, "x.", c, 2, 5, rng);
    nn::Graph<float> g(false);
    nn::Tensor<float> oe(nn::Shape{2, c, 6, 5});
    nn::Rng data(11);
    nn::init_normal(oe, 1.0, data);
    nn::Tensor<float> xs(nn::Shape{2, 2, 6, 5}), xc(nn::Shape{2, 5, 6, 5});
    nn::init_normal(xs, 1.0, data);
    nn::init_normal(xc, 1.0, data);
    Var out = xa(g, g.constant(oe), g.constant(xs), g.constant(xc));
    CHECK(g.shape(out) == oe.shape());
    CHECK(g.value(out) == oe);
    CHECK_THROWS_AS(xa(g, g.constant(oe), g.constant(nn::Tensor<float>(nn::Shape{2, 2, 6, 4})), g.constant(xc)),
                    ValidationError);
    xa.tau->value[0] = 0.0f;
    CHECK_THROWS_AS(xa(g, g.constant(oe), g.constant(xs), g.constant(xc)), ValidationError);
  }
}

TEST_CASE("cross attention gradients match central differences (C=4, 8x8, double)") {
  nn::ParamStore<double> ps;
  nn::Rng rng(21);
  auto xa = CrossAttention<double>::make(ps, "x.", 4, 3, 3, rng);
  // Leave the zero-init point so every parameter influences the output.
  nn::init_normal(xa.proj.w->value, 0.5, rng);
  nn::init_normal(xa.proj.b->value, 0.5, rng);
  xa.tau->value[0] = 0.8;
  for (auto& [name, p] : ps)
    if (name.find("ln_") != std::string::npos) nn::init_normal(p.value, 0.3, rng), p.value[0] += 1.0;
  auto& xo = ps.add("in.oe", nn::Shape{2, 4, 8, 8});
  auto& xs = ps.add("in.s", nn::Shape{2, 3, 8, 8});
  auto& xc = ps.add("in.c", nn::Shape{2, 3, 8, 8});
  for (auto* p : {&xo, &xs, &xc}) nn::init_normal(p->value, 1.0, rng);

  auto r = testing::grad_check(ps, [&](nn::Graph<double>& g) {
    return testing::random_projection(g, xa(g, g.param(xo), g.param(xs), g.param(xc)), 5);
  }, 200, 3);
  INFO(r.worst);
  CHECK(r.checked == 200);
  CHECK(r.max_rel_error <= 1e-4);

  // Every parameter tensor of the block is covered, including tau.
  for (auto& [name, p] : ps) {
    double total = 0;
    for (double v : p.grad.data()) total += std::abs(v);
    INFO(name);
    CHECK(total > 0);
  }
}

TEST_CASE("DFCB: residual contract at initialisation") {
  genprior::UNet<float> unet(small_unet());
  DFCB<float> dfcb(small_unet(), 77);
  dfcb.init_from(unet);
  CHECK(dfcb.params().at("main.level0.res.c1.w").value == unet.params().at("enc.level0.res.c1.w").value);

  GuidanceTensors t = pack_tensors(64, 3);
  nn::Tensor<float> zt = genprior::gaussian_noise(nn::Shape{1, 4, 16, 16}, 1);
  nn::Tensor<float> y = genprior::gaussian_noise(nn::Shape{1, 4, 16, 16}, 2);
  auto res = dfcb.residuals(zt, y, t.structure, t.chroma, {500});
  auto shapes = unet.residual_shapes(1, 16, 16);
  REQUIRE(res.size() == shapes.size());
  CHECK(res.size() == static_cast<std::size_t>(small_unet().levels() + 1));
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].shape() == shapes[i]);
    CHECK(max_abs(res[i]) == 0.0);
  }
  GuidanceTensors wrong = pack_tensors(32, 3);
  CHECK_THROWS_AS(dfcb.residuals(zt, y, wrong.structure, wrong.chroma, {500}), ValidationError);
  CHECK_THROWS_AS(dfcb.residuals(zt, genprior::gaussian_noise(nn::Shape{1, 4, 8, 8}, 2), t.structure, t.chroma, {1}),
                  ValidationError);
}

TEST_CASE("FCB: shortcut contract at initialisation") {
  genprior::VAE<float> vae(small_vae());
  FCB<float> fcb(small_vae(), 78);
  fcb.init_from(vae);
  GuidanceTensors t = pack_tensors(64, 4);
  nn::Tensor<float> oe = nn::image_to_tensor(testing::textured_image(64, 64, 5));
  auto sc = fcb.shortcuts(oe, t.structure, t.chroma);
  auto shapes = vae.shortcut_shapes(1, 64, 64);
  REQUIRE(sc.size() == 2);
  for (std::size_t i = 0; i < sc.size(); ++i) {
    CHECK(sc[i].shape() == shapes[i]);
    CHECK(max_abs(sc[i]) == 0.0);
  }
  nn::Tensor<float> z = vae.encode(oe);
  CHECK(vae.decode(z, &sc) == vae.decode(z));
  CHECK_THROWS_AS(fcb.shortcuts(nn::Tensor<float>(nn::Shape{1, 3, 62, 64}), t.structure, t.chroma), ValidationError);
}

TEST_CASE("zero-init neutrality of the conditioned pipeline") {
  genprior::Backbone b(small_unet(), small_vae());
  b.mark_ready();
  DFCB<float> dfcb(small_unet(), 1);
  dfcb.init_from(b.unet);
  FCB<float> fcb(small_vae(), 2);
  fcb.init_from(b.vae);

  ImageRGB oe = testing::textured_image(64, 64, 12);
  GuidanceTensors t = pack_tensors(64, 13);
  nn::Tensor<float> oe_t = nn::image_to_tensor(oe);
  nn::Tensor<float> y_oe = b.vae.encode(oe_t);
  genprior::SamplerOptions o{.steps = 4, .seed = 5};
  auto z_cond = b.sample(y_oe.shape(), o, [&](const nn::Tensor<float>& zt, int step) {
    return dfcb.residuals(zt, y_oe, t.structure, t.chroma, {step});
  });
  auto z_plain = b.sample(y_oe.shape(), o);
  auto sc = fcb.shortcuts(oe_t, t.structure, t.chroma);
  auto img_cond = b.vae.decode(z_cond, &sc);
  auto img_plain = b.vae.decode(z_plain);
  double worst = 0;
  for (std::size_t i = 0; i < img_cond.size(); ++i) worst = std::max(worst, double(std::abs(img_cond[i] - img_plain[i])));
  CHECK(worst <= 1e-6);
}

TEST_CASE("every DFCB and FCB parameter receives gradient once zero projections move") {
  genprior::Backbone b(small_unet(), small_vae());
  b.unet.params().set_trainable(false);
  b.vae.params().set_trainable(false);
  DFCB<float> dfcb(small_unet(), 3);
  dfcb.init_from(b.unet);
  FCB<float> fcb(small_vae(), 4);
  fcb.init_from(b.vae);

  GuidanceTensors t;
  {
    GuidancePack packs[2] = {decompose(testing::textured_image(64, 64, 1), random_mask(64, 64, 2)),
                             decompose(testing::textured_image(64, 64, 3), random_mask(64, 64, 4))};
    t = guidance_tensors(packs);
  }
  ImageRGB imgs[2] = {testing::textured_image(64, 64, 5), testing::textured_image(64, 64, 6)};
  nn::Tensor<float> oe = nn::images_to_tensor(imgs);
  nn::Tensor<float> y_oe = b.vae.encode(oe);
  nn::Tensor<float> z0 = genprior::gaussian_noise(y_oe.shape(), 7);
  nn::Tensor<float> eps = genprior::gaussian_noise(y_oe.shape(), 8);
  const std::vector<int> steps{100, 800};
  nn::Tensor<float> zt = genprior::add_noise(b.schedule, z0, steps, eps);

  auto dfcb_step = [&] {
    nn::Graph<float> g;
    auto res = dfcb.forward(g, g.constant(zt), g.constant(y_oe), g.constant(t.structure), g.constant(t.chroma), steps);
    g.backward(nn::mse(g, b.unet.forward(g, g.constant(zt), steps, &res), g.constant(eps)));
  };
  auto fcb_step = [&] {
    nn::Graph<float> g;
    auto sc = fcb.forward(g, g.constant(oe), g.constant(t.structure), g.constant(t.chroma));
    Var z = g.constant(b.vae.encode(oe));
    Var img = b.vae.decode(g, nn::scale(g, z, 1.0f / b.vae.latent_scale()), &sc);
    g.backward(nn::l1(g, img, g.constant(oe)));
  };

  for (auto [store, step] : {std::pair{&dfcb.params(), std::function<void()>(dfcb_step)},
                             std::pair{&fcb.params(), std::function<void()>(fcb_step)}}) {
    nn::Adam opt(nn::AdamConfig{.lr = 1e-3});
    // Zero convs move on the first update, the attention projections behind
    // them on the second; only then does gradient reach the extractors.
    for (int k = 0; k < 2; ++k) {
      store->zero_grad();
      step();
      opt.step(*store);
    }
    store->zero_grad();
    b.unet.params().zero_grad();
    b.vae.params().zero_grad();
    step();
    for (auto& [name, p] : *store) {
      double total = 0;
      for (float v : p.grad.data()) total += std::abs(v);
      INFO(name);
      CHECK(total > 0);
    }
  }
  for (auto* frozen : {&b.unet.params(), &b.vae.params()})
    for (auto& [name, p] : *frozen) {
      INFO(name);
      CHECK(max_abs(p.grad) == 0.0);
    }
}
