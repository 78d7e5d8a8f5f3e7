#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "expfuse/imgcore/color.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"
#include "expfuse/imgcore/mask.hpp"
#include "support.hpp"

using namespace expfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "expfuse_test_imgcore";
  fs::create_directories(dir);
  return dir;
}

float max_abs_diff(const ImageRGB& a, const ImageRGB& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("rgb_to_yuv on achromatic colours") {
  ImageRGB white(2, 2, 1.0f);
  auto yuv = rgb_to_yuv(white);
  CHECK(yuv.y(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(yuv.u(1, 1)) < 1e-7);
  CHECK(std::abs(yuv.v(1, 0)) < 1e-7);

  ImageRGB gray(3, 3, 0.5f);
  yuv = rgb_to_yuv(gray);
  CHECK(yuv.y(2, 2) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(std::abs(yuv.u(2, 2)) < 1e-7);
  CHECK(std::abs(yuv.v(2, 2)) < 1e-7);
}

TEST_CASE("yuv_to_rgb extremes") {
  ImageYUV yuv{Plane(1, 1, 1.0f), Plane(1, 1, 0.0f), Plane(1, 1, 0.0f)};
  auto rgb = yuv_to_rgb(yuv);
  for (int c = 0; c < 3; ++c) CHECK(rgb(0, 0, c) == doctest::Approx(1.0f).epsilon(1e-6));
  yuv.y(0, 0) = 0.0f;
  rgb = yuv_to_rgb(yuv);
  for (int c = 0; c < 3; ++c) CHECK(rgb(0, 0, c) == 0.0f);
}

TEST_CASE("colour round trip and chroma range over random pixels") {
  const ImageRGB img = testing::random_image(64, 64, 11);
  const ImageYUV yuv = rgb_to_yuv(img);
  for (float u : yuv.u.data()) CHECK((u >= -0.5f && u <= 0.5f));
  for (float v : yuv.v.data()) CHECK((v >= -0.5f && v <= 0.5f));
  CHECK(max_abs_diff(yuv_to_rgb(yuv), img) <= 1e-4f);
}

TEST_CASE("luminance row is linear") {
  const ImageRGB img = testing::random_image(16, 16, 5);
  const ImageYUV base = rgb_to_yuv(img);
  for (float a : {0.1f, 0.5f, 1.0f}) {
    const ImageYUV scaled = rgb_to_yuv(testing::scale_image(img, a));
    for (std::size_t i = 0; i < base.y.size(); ++i)
      CHECK(std::abs(scaled.y.data()[i] - a * base.y.data()[i]) <= 1e-6f);
  }
}

TEST_CASE("rgb_to_yuv rejects non-finite input") {
  ImageRGB img(1, 1);
  img(0, 0, 1) = std::nanf("");
  CHECK_THROWS_AS(rgb_to_yuv(img), ValidationError);
}

TEST_CASE("8-bit save then load reproduces quantised values") {
  ImageRGB img = testing::random_image(17, 23, 3);
  for (float& v : img.data()) v = std::round(v * 255.0f) / 255.0f;
  const fs::path p = temp_dir() / "rt8.png";
  save_image(img, p);
  const ImageRGB back = load_image(p, BitDepth::k8);
  REQUIRE(same_size(back, img));
  for (std::size_t i = 0; i < img.data().size(); ++i)
    CHECK(std::lround(back.data()[i] * 255.0f) == std::lround(img.data()[i] * 255.0f));
  // a second round trip is bitwise stable
  save_image(back, p);
  CHECK(load_image(p) == back);
}

TEST_CASE("16-bit gradient maps its maximum to 1.0") {
  ImageRGB grad(4, 256);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 256; ++x)
      for (int c = 0; c < 3; ++c) grad(y, x, c) = x / 255.0f;
  const fs::path p = temp_dir() / "grad16.png";
  save_image(grad, p, BitDepth::k16);
  const ImageRGB back = load_image(p);
  float mx = 0.0f;
  for (float v : back.data()) mx = std::max(mx, v);
  CHECK(mx == 1.0f);
  CHECK(max_abs_diff(back, grad) <= 1.0f / 65535.0f);
}

TEST_CASE("image loading errors carry distinct codes") {
  try {
    load_image(temp_dir() / "does_not_exist.png");
    FAIL("expected an exception");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrc::kFileNotFound);
  }

  const fs::path bogus = temp_dir() / "bogus.png";
  std::ofstream(bogus) << "definitely not a png";
  try {
    load_image(bogus);
    FAIL("expected an exception");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrc::kUnsupportedFormat);
  }

  const fs::path p8 = temp_dir() / "depth8.png";
  save_image(ImageRGB(2, 2, 0.5f), p8);
  try {
    load_image(p8, BitDepth::k16);
    FAIL("expected an exception");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrc::kBitDepthMismatch);
  }
}

TEST_CASE("mask png round trip") {
  BinaryMask m(9, 7);
  std::mt19937 rng(1);
  for (auto& v : m.data()) v = rng() & 1;
  const fs::path p = temp_dir() / "mask.png";
  save_mask(m, p);
  CHECK(load_mask(p) == m);
}

TEST_CASE("resize_mask on constant masks") {
  for (std::uint8_t fill : {0, 1}) {
    const BinaryMask m(13, 9, fill);
    for (auto [h, w] : {std::pair{1, 1}, std::pair{5, 31}, std::pair{40, 40}}) {
      const BinaryMask r = resize_mask(m, h, w);
      CHECK(r.height() == h);
      CHECK(r.width() == w);
      for (auto v : r.data()) CHECK(v == fill);
    }
  }
}

TEST_CASE("resize_mask of a centred square agrees with a nearest-neighbour oracle") {
  BinaryMask m(16, 16);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) m(y, x) = 1;

  const BinaryMask r = resize_mask(m, 32, 32);
  // Nearest-neighbour oracle: sample the source pixel containing each target centre.
  BinaryMask nn(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) nn(y, x) = m((y * 16) / 32, (x * 16) / 32);

  const double area = r.coverage() * 32 * 32;
  const double oracle_area = nn.coverage() * 32 * 32;
  CHECK(oracle_area == 256.0);
  CHECK(std::abs(area / oracle_area - 1.0) <= 0.10);
  CHECK(mask_iou(r, nn) >= 0.85);
  // centred: symmetric under flips
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(r(y, x) == r(31 - y, 31 - x));
}

TEST_CASE("resize_mask is binary, idempotent at identical size, and validates") {
  BinaryMask m(20, 20);
  std::mt19937 rng(9);
  for (auto& v : m.data()) v = (rng() % 3) == 0;
  CHECK(resize_mask(m, 20, 20) == m);
  const BinaryMask r = resize_mask(m, 7, 33);
  for (auto v : r.data()) CHECK((v == 0 || v == 1));
  CHECK_THROWS_AS(resize_mask(m, 0, 4), ValidationError);
  CHECK_THROWS_AS(resize_mask(m, 4, -1), ValidationError);
}

TEST_CASE("flow file round trip is bitwise and corrupt files are rejected") {
  FlowField f(5, 8);
  std::mt19937 rng(4);
  std::normal_distribution<float> d(0.0f, 2.0f);
  for (float& v : f.data()) v = d(rng);
  const fs::path p = temp_dir() / "f.flo";
  save_flow(f, p);
  CHECK(load_flow(p) == f);

  std::filesystem::resize_file(p, 12 + 8);
  CHECK_THROWS_AS(load_flow(p), IoError);
  std::ofstream(p, std::ios::binary) << "XXXX";
  try {
    load_flow(p);
    FAIL("expected an exception");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrc::kUnsupportedFormat);
  }
}
