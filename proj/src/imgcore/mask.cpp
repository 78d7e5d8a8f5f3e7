#include "expfuse/imgcore/mask.hpp"

#include <algorithm>
#include <cmath>

#include "expfuse/imgcore/error.hpp"

namespace expfuse {

BinaryMask resize_mask(const BinaryMask& mask, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_mask: target size must be positive");
  require(mask.height() >= 1 && mask.width() >= 1, "resize_mask: empty source mask");
  if (out_h == mask.height() && out_w == mask.width()) return mask;

  const double sy = static_cast<double>(mask.height()) / out_h;
  const double sx = static_cast<double>(mask.width()) / out_w;
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, mask.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, mask.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, mask.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, mask.width() - 1);
      const double ax = fx - x0;
      const double top = (1 - ax) * mask(y0, x0) + ax * mask(y0, x1);
      const double bottom = (1 - ax) * mask(y1, x0) + ax * mask(y1, x1);
      const double v = (1 - ay) * top + ay * bottom;
      out(y, x) = v >= 0.5 ? 1 : 0;
    }
  }
  return out;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b, "mask_iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.data()[i] & b.data()[i]);
    uni += (a.data()[i] | b.data()[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ImageRGB apply_mask(const ImageRGB& img, const BinaryMask& mask) {
  require_same_size(img, mask, "apply_mask");
  ImageRGB out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (mask(y, x))
        for (int c = 0; c < 3; ++c) out(y, x, c) = 0.0f;
  return out;
}

}  // namespace expfuse
