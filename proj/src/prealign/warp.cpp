#include <algorithm>
#include <cmath>

#include "expfuse/imgcore/error.hpp"
#include "expfuse/prealign/prealign.hpp"

namespace expfuse {
namespace {

struct Tap {
  int x0, x1, y0, y1;
  float ax, ay;
};

inline Tap bilinear_tap(float px, float py, int h, int w) {
  px = std::clamp(px, 0.0f, static_cast<float>(w - 1));
  py = std::clamp(py, 0.0f, static_cast<float>(h - 1));
  Tap t{};
  t.x0 = static_cast<int>(std::floor(px));
  t.y0 = static_cast<int>(std::floor(py));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.ax = px - static_cast<float>(t.x0);
  t.ay = py - static_cast<float>(t.y0);
  return t;
}

template <class Sample>
inline float blend(const Tap& t, Sample&& at) {
  const float top = (1.0f - t.ax) * at(t.y0, t.x0) + t.ax * at(t.y0, t.x1);
  const float bottom = (1.0f - t.ax) * at(t.y1, t.x0) + t.ax * at(t.y1, t.x1);
  return (1.0f - t.ay) * top + t.ay * bottom;
}

}  // namespace

void ConsistencyParams::validate() const {
  require(std::isfinite(alpha1) && alpha1 >= 0.0, "consistency alpha1 must be >= 0");
  require(std::isfinite(alpha2) && alpha2 >= 0.0, "consistency alpha2 must be >= 0");
}

ImageRGB backward_warp(const ImageRGB& img, const FlowField& flow) {
  require_same_size(img, flow, "backward_warp");
  const int h = img.height();
  const int w = img.width();
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Tap t = bilinear_tap(x + flow.dx(y, x), y + flow.dy(y, x), h, w);
      for (int c = 0; c < 3; ++c)
        out(y, x, c) = blend(t, [&](int yy, int xx) { return img(yy, xx, c); });
    }
  }
  return out;
}

Plane backward_warp(const Plane& img, const FlowField& flow) {
  require_same_size(img, flow, "backward_warp");
  const int h = img.height();
  const int w = img.width();
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Tap t = bilinear_tap(x + flow.dx(y, x), y + flow.dy(y, x), h, w);
      out(y, x) = blend(t, [&](int yy, int xx) { return img(yy, xx); });
    }
  return out;
}

BinaryMask occlusion_mask(const FlowField& fwd, const FlowField& bwd, const ConsistencyParams& params) {
  require_same_size(fwd, bwd, "occlusion_mask");
  params.validate();
  const int h = fwd.height();
  const int w = fwd.width();
  BinaryMask mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fx = fwd.dx(y, x);
      const double fy = fwd.dy(y, x);
      const Tap t = bilinear_tap(x + fwd.dx(y, x), y + fwd.dy(y, x), h, w);
      const double bx = blend(t, [&](int yy, int xx) { return bwd.dx(yy, xx); });
      const double by = blend(t, [&](int yy, int xx) { return bwd.dy(yy, xx); });
      const double ex = fx + bx;
      const double ey = fy + by;
      const double err = ex * ex + ey * ey;
      const double bound = params.alpha1 * (fx * fx + fy * fy + bx * bx + by * by) + params.alpha2;
      mask(y, x) = err > bound ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace expfuse
