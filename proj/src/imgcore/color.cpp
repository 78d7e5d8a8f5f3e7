#include "expfuse/imgcore/color.hpp"

#include <algorithm>
#include <cmath>

#include "expfuse/imgcore/error.hpp"

namespace expfuse {

ImageYUV rgb_to_yuv(const ImageRGB& img) {
  const int h = img.height();
  const int w = img.width();
  ImageYUV out{Plane(h, w), Plane(h, w), Plane(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = img(y, x, 0);
      const double g = img(y, x, 1);
      const double b = img(y, x, 2);
      if (!std::isfinite(r) || !std::isfinite(g) || !std::isfinite(b))
        throw ValidationError("rgb_to_yuv: non-finite input");
      const double luma = bt601::kR * r + bt601::kG * g + bt601::kB * b;
      out.y(y, x) = static_cast<float>(luma);
      out.u(y, x) = static_cast<float>((b - luma) * bt601::kUScale);
      out.v(y, x) = static_cast<float>((r - luma) * bt601::kVScale);
    }
  }
  return out;
}

ImageRGB yuv_to_rgb(const ImageYUV& img) {
  require_same_size(img.y, img.u, "yuv_to_rgb (U plane)");
  require_same_size(img.y, img.v, "yuv_to_rgb (V plane)");
  const int h = img.height();
  const int w = img.width();
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double luma = img.y(y, x);
      const double r = luma + img.v(y, x) / bt601::kVScale;
      const double b = luma + img.u(y, x) / bt601::kUScale;
      const double g = (luma - bt601::kR * r - bt601::kB * b) / bt601::kG;
      if (!std::isfinite(r) || !std::isfinite(g) || !std::isfinite(b))
        throw ValidationError("yuv_to_rgb: non-finite input");
      out(y, x, 0) = static_cast<float>(std::clamp(r, 0.0, 1.0));
      out(y, x, 1) = static_cast<float>(std::clamp(g, 0.0, 1.0));
      out(y, x, 2) = static_cast<float>(std::clamp(b, 0.0, 1.0));
    }
  }
  return out;
}

Plane luminance(const ImageRGB& img) {
  Plane out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(y, x) = luma(img(y, x, 0), img(y, x, 1), img(y, x, 2));
  return out;
}

}  // namespace expfuse
