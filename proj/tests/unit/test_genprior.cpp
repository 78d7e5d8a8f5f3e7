#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "expfuse/genprior/backbone.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace expfuse;
using namespace expfuse::genprior;
using nn::Graph;
using nn::Var;

namespace {

BackboneConfig small_unet() {
  BackboneConfig c;
  c.base = 8;
  c.mult = {1, 2, 2};
  c.attention = {false, false, true};
  c.seed = 3;
  return c;
}

VaeConfig small_vae() {
  VaeConfig c;
  c.widths = {8, 8, 16};
  c.seed = 4;
  return c;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("default schedule invariants") {
  NoiseSchedule s;
  CHECK(s.steps() == 1000);
  CHECK(s.alpha_bar(0) > 0.99);
  CHECK(s.beta(0) == doctest::Approx(1e-4));
  CHECK(s.beta(999) == doctest::Approx(0.02));
  for (int t = 0; t < s.steps(); ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 0) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK_THROWS_AS(s.alpha_bar(1000), ValidationError);
  CHECK_THROWS_AS(NoiseSchedule(1000, 0.0, 0.02), ValidationError);
}

TEST_CASE("add_noise algebra") {
  NoiseSchedule s;
  const Shape sh{2, 4, 8, 8};
  Tensor<float> z0 = gaussian_noise(sh, 1);
  Tensor<float> eps = gaussian_noise(sh, 2);

  SUBCASE("t=0 is a near identity") {
    Tensor<float> zt = add_noise(s, z0, {0, 0}, eps);
    double diff = 0, noise = 0;
    for (std::size_t i = 0; i < zt.size(); ++i) {
      diff += (zt[i] - z0[i]) * (zt[i] - z0[i]);
      noise += eps[i] * eps[i];
    }
    CHECK(std::sqrt(diff) <= 0.02 * std::sqrt(noise));
  }
  SUBCASE("t=T-1 is almost pure noise") {
    Tensor<float> zt = add_noise(s, z0, {999, 999}, eps);
    double sxy = 0, sxx = 0, syy = 0, mx = 0, my = 0;
    for (std::size_t i = 0; i < zt.size(); ++i) mx += zt[i], my += eps[i];
    mx /= zt.size();
    my /= zt.size();
    for (std::size_t i = 0; i < zt.size(); ++i) {
      sxy += (zt[i] - mx) * (eps[i] - my);
      sxx += (zt[i] - mx) * (zt[i] - mx);
      syy += (eps[i] - my) * (eps[i] - my);
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    // Independent unit-variance z0 and eps: corr = sqrt(1-ab) / sqrt(ab + (1-ab)) = sqrt(1-ab).
    const double predicted = std::sqrt(1.0 - s.alpha_bar(999));
    CHECK(corr >= 0.99);
    CHECK(corr == doctest::Approx(predicted).epsilon(2e-3));
  }
  SUBCASE("linearity in z0") {
    const float a = 2.5f;
    Tensor<float> az0 = z0;
    for (float& v : az0.data()) v *= a;
    Tensor<float> lhs = add_noise(s, az0, {300, 700}, eps);
    Tensor<float> base = add_noise(s, Tensor<float>(sh), {300, 700}, eps);
    const std::size_t per = z0.size() / 2;
    for (std::size_t i = 0; i < z0.size(); ++i) {
      const int t = i < per ? 300 : 700;
      CHECK(lhs[i] - base[i] == doctest::Approx(a * std::sqrt(s.alpha_bar(t)) * z0[i]).epsilon(1e-4));
    }
  }
  SUBCASE("oracle epsilon recovers z0") {
    Tensor<double> z0d = z0.cast<double>();
    Tensor<double> epsd = eps.cast<double>();
    for (int t : {0, 1, 250, 999}) {
      Tensor<double> zt = add_noise(s, z0d, {t, t}, epsd);
      Tensor<double> rec = recover_z0(s, zt, {t, t}, epsd);
      for (std::size_t i = 0; i < rec.size(); ++i) CHECK(std::abs(rec[i] - z0d[i]) <= 1e-5);
    }
  }
  CHECK_THROWS_AS(add_noise(s, z0, {0, 1000}, eps), ValidationError);
  CHECK_THROWS_AS(add_noise(s, z0, {0}, eps), ValidationError);
}

TEST_CASE("spaced timesteps") {
  CHECK(spaced_timesteps(1000, 1) == std::vector<int>{999});
  auto ts = spaced_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 999);
  CHECK(ts.back() == 19);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK_THROWS_AS(spaced_timesteps(1000, 1001), ValidationError);
  CHECK_THROWS_AS(spaced_timesteps(1000, 0), ValidationError);
}

TEST_CASE("U-Net shape contract and zero-residual neutrality") {
  UNet<float> u(small_unet());
  Tensor<float> z = gaussian_noise(Shape{2, 4, 16, 16}, 5);
  const std::vector<int> t{10, 900};
  Tensor<float> plain = u.predict(z, t);
  CHECK(plain.shape() == z.shape());

  ControlResiduals<float> zeros;
  for (const Shape& s : u.residual_shapes(2, 16, 16)) zeros.emplace_back(s);
  CHECK(zeros.size() == 4);
  CHECK(max_abs_diff(u.predict(z, t, &zeros), plain) <= 1e-6);

  ControlResiduals<float> bumped = zeros;
  bumped[0].fill(0.5f);
  CHECK(max_abs_diff(u.predict(z, t, &bumped), plain) > 1e-4);

  ControlResiduals<float> short_list(zeros.begin(), zeros.end() - 1);
  CHECK_THROWS_AS(u.predict(z, t, &short_list), ValidationError);
  ControlResiduals<float> wrong = zeros;
  wrong[1] = Tensor<float>(Shape{2, 16, 4, 4});
  CHECK_THROWS_AS(u.predict(z, t, &wrong), ValidationError);
  CHECK_THROWS_AS(u.predict(gaussian_noise(Shape{1, 4, 10, 10}, 1), {0}), ValidationError);
  CHECK_THROWS_AS(u.predict(z, {0}), ValidationError);

  BackboneConfig bad = small_unet();
  bad.mult = {1};
  bad.attention = {false};
  CHECK_THROWS_AS(UNet<float>{bad}, ValidationError);
}

TEST_CASE("U-Net DDPM loss gradients match central differences (2 levels, 8x8x4, double)") {
  BackboneConfig cfg;
  cfg.base = 4;
  cfg.mult = {1, 2};
  cfg.attention = {false, true};
  cfg.seed = 11;
  UNet<double> u(cfg);
  NoiseSchedule s;
  Tensor<double> z0 = gaussian_noise(Shape{2, 4, 8, 8}, 6).cast<double>();
  Tensor<double> eps = gaussian_noise(Shape{2, 4, 8, 8}, 7).cast<double>();
  const std::vector<int> t{37, 612};
  Tensor<double> zt = add_noise(s, z0, t, eps);
  auto r = testing::grad_check(
      u.params(),
      [&](Graph<double>& g) { return nn::mse(g, u.forward(g, g.constant(zt), t), g.constant(eps)); }, 20, 12);
  INFO(r.worst);
  CHECK(r.checked == 20);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("VAE shapes, determinism and shortcut neutrality") {
  VAE<float> v(VaeConfig{});
  CHECK(v.config().factor() == 4);
  ImageRGB img = testing::textured_image(64, 64, 8);
  Tensor<float> z = vae_encode(v, img);
  CHECK(z.shape() == Shape{1, 4, 16, 16});
  CHECK(vae_encode(v, img) == z);

  ImageRGB out = vae_decode(v, z);
  CHECK(out.height() == 64);
  CHECK(out.width() == 64);
  for (float x : out.data()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }

  auto shapes = v.shortcut_shapes(1, 64, 64);
  REQUIRE(shapes.size() == 2);
  CHECK(shapes[0] == Shape{1, 64, 16, 16});
  CHECK(shapes[1] == Shape{1, 32, 32, 32});
  std::vector<Tensor<float>> zeros;
  for (const Shape& s : shapes) zeros.emplace_back(s);
  CHECK(max_abs_diff(v.decode(z, &zeros), v.decode(z)) <= 1e-6);
  std::vector<Tensor<float>> wrong{zeros[1], zeros[0]};
  CHECK_THROWS_AS(v.decode(z, &wrong), ValidationError);

  CHECK_THROWS_AS(vae_encode(v, ImageRGB(62, 64)), ValidationError);
  CHECK_THROWS_AS(v.set_latent_scale(0.0f), NumericError);
}

TEST_CASE("sampler contracts") {
  Backbone b(small_unet(), small_vae());
  const Shape sh{1, 4, 16, 16};
  CHECK_THROWS_AS(b.sample(sh, {}), StateError);
  b.mark_ready();

  SamplerOptions o{.steps = 5, .seed = 42};
  Tensor<float> a = b.sample(sh, o);
  CHECK(b.sample(sh, o) == a);
  SamplerOptions other = o;
  other.seed = 43;
  CHECK(!(b.sample(sh, other) == a));

  int calls = 0;
  Tensor<float> zero_cond = b.sample(sh, o, [&](const Tensor<float>& zt, int) {
    ++calls;
    ControlResiduals<float> r;
    for (const Shape& s : b.unet.residual_shapes(zt.shape().n, zt.shape().h, zt.shape().w)) r.emplace_back(s);
    return r;
  });
  CHECK(calls == 5);
  CHECK(max_abs_diff(zero_cond, a) <= 1e-6);

  // One step is the closed-form prediction from pure noise at t = T-1.
  SamplerOptions one{.steps = 1, .seed = 9};
  Tensor<float> zT = gaussian_noise(sh, 9);
  Tensor<float> expected = recover_z0(b.schedule, zT, {999}, b.unet.predict(zT, {999}));
  CHECK(b.sample(sh, one) == expected);
  CHECK_THROWS_AS(b.sample(sh, SamplerOptions{.steps = 0}), ValidationError);
}

TEST_CASE("backbone checkpoint reload reproduces forward outputs bitwise") {
  Backbone b(small_unet(), small_vae());
  b.vae.set_latent_scale(0.37f);
  b.mark_ready();
  nn::Checkpoint ck;
  b.save_to(ck);
  const auto path = std::filesystem::temp_directory_path() / "expfuse_backbone_test.ckpt";
  ck.save(path);
  Backbone r = Backbone::from_checkpoint(nn::Checkpoint::load(path));
  std::filesystem::remove(path);

  CHECK(r.ready());
  CHECK(r.vae.latent_scale() == 0.37f);
  Tensor<float> z = gaussian_noise(Shape{1, 4, 16, 16}, 3);
  CHECK(r.unet.predict(z, {123}) == b.unet.predict(z, {123}));
  CHECK(r.vae.decode(z) == b.vae.decode(z));
  ImageRGB img = testing::textured_image(64, 64, 2);
  CHECK(vae_encode(r.vae, img) == vae_encode(b.vae, img));
  SamplerOptions o{.steps = 3, .seed = 1};
  CHECK(r.sample(z.shape(), o) == b.sample(z.shape(), o));

  nn::Checkpoint empty;
  CHECK_THROWS_AS(Backbone::from_checkpoint(empty), StateError);
}
