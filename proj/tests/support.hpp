#pragma once

// Shared generators for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "expfuse/imgcore/image.hpp"

namespace expfuse::testing {

inline ImageRGB random_image(int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  ImageRGB img(h, w);
  for (float& v : img.data()) v = dist(rng);
  return img;
}

inline double lattice_value(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  std::uint64_t hsh = seed * 0x9E3779B97F4A7C15ull;
  hsh ^= static_cast<std::uint64_t>(ix) * 0xBF58476D1CE4E5B9ull;
  hsh ^= static_cast<std::uint64_t>(iy) * 0x94D049BB133111EBull;
  hsh ^= hsh >> 31;
  hsh *= 0xD6E8FEB86677C2EDull;
  hsh ^= hsh >> 29;
  return static_cast<double>(hsh >> 11) / static_cast<double>(1ull << 53);
}

// Non-periodic value noise (three octaves) in roughly [0.1, 0.9]; it depends
// only on absolute coordinates, so shifted renders are exact translations.
inline float texture_value(double x, double y, std::uint64_t seed, int channel) {
  double v = 0.0;
  double norm = 0.0;
  double amp = 1.0;
  for (int octave = 0; octave < 3; ++octave) {
    const double cell = 8.0 / (1 << octave);
    const double gx = x / cell;
    const double gy = y / cell;
    const double fx = std::floor(gx);
    const double fy = std::floor(gy);
    double tx = gx - fx;
    double ty = gy - fy;
    tx = tx * tx * (3 - 2 * tx);
    ty = ty * ty * (3 - 2 * ty);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const std::uint64_t s = seed * 31 + static_cast<std::uint64_t>(channel) * 7 + octave;
    const double top = (1 - tx) * lattice_value(ix, iy, s) + tx * lattice_value(ix + 1, iy, s);
    const double bot = (1 - tx) * lattice_value(ix, iy + 1, s) + tx * lattice_value(ix + 1, iy + 1, s);
    v += amp * ((1 - ty) * top + ty * bot);
    norm += amp;
    amp *= 0.6;
  }
  return static_cast<float>(0.1 + 0.8 * v / norm);
}

inline ImageRGB textured_image(int h, int w, std::uint64_t seed, double shift_x = 0.0, double shift_y = 0.0) {
  ImageRGB img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = texture_value(x - shift_x, y - shift_y, seed, c);
        img(y, x, c) = std::min(1.0f, std::max(0.0f, v));
      }
  return img;
}

inline ImageRGB scale_image(const ImageRGB& img, float a) {
  ImageRGB out = img;
  for (float& v : out.data()) v *= a;
  return out;
}

}  // namespace expfuse::testing

namespace expfuse::testing {

// Textured 16x16 square translating `shift` px to the right over a static
// textured background. Frame `a` plays the base (oe) geometry, `b` the
// guidance (ue) geometry.
struct SquareScene {
  ImageRGB a;
  ImageRGB b;
  FlowField a_to_b;  // a(x) = b(x + f(x))
  FlowField b_to_a;
  BinaryMask occluded;  // pixels of `a` with no correspondence in `b`
};

inline SquareScene translating_square(int size = 64, int square = 16, int shift = 8,
                                      std::uint64_t seed = 21) {
  const int x0 = (size - square - shift) / 2;
  const int y0 = (size - square) / 2;
  auto in_square = [&](int x, int y, int off) {
    return x >= x0 + off && x < x0 + off + square && y >= y0 && y < y0 + square;
  };
  SquareScene s{ImageRGB(size, size), ImageRGB(size, size), FlowField(size, size),
                FlowField(size, size), BinaryMask(size, size)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float bg = texture_value(x, y, seed, c);
        const float fa = 1.0f - texture_value(x - x0, y - y0, seed + 1, c);
        const float fb = 1.0f - texture_value(x - x0 - shift, y - y0, seed + 1, c);
        s.a(y, x, c) = std::clamp(in_square(x, y, 0) ? fa : bg, 0.0f, 1.0f);
        s.b(y, x, c) = std::clamp(in_square(x, y, shift) ? fb : bg, 0.0f, 1.0f);
      }
      if (in_square(x, y, 0)) s.a_to_b.dx(y, x) = static_cast<float>(shift);
      if (in_square(x, y, shift)) s.b_to_a.dx(y, x) = static_cast<float>(-shift);
      // A background point of `a` is hidden in `b` iff the moved square covers it.
      s.occluded(y, x) = (!in_square(x, y, 0) && in_square(x, y, shift)) ? 1 : 0;
    }
  return s;
}

}  // namespace expfuse::testing
