#include <algorithm>
#include <vector>

#include "expfuse/imgcore/error.hpp"
#include "expfuse/prealign/prealign.hpp"

namespace expfuse {

// Mid-rank quantile of each ue sample, read off the oe quantile function with
// linear interpolation. Equal distributions map onto themselves exactly.
ImageRGB intensity_match(const ImageRGB& ue, const ImageRGB& oe) {
  require_same_size(ue, oe, "intensity_match");
  require(!ue.empty(), "intensity_match: empty image");
  const std::size_t n = static_cast<std::size_t>(ue.height()) * ue.width();

  ImageRGB out(ue.height(), ue.width());
  std::vector<float> source(n);
  std::vector<float> target;
  target.reserve(n);
  for (int c = 0; c < 3; ++c) {
    target.clear();
    for (std::size_t i = 0; i < n; ++i) {
      source[i] = ue.data()[i * 3 + c];
      const float t = oe.data()[i * 3 + c];
      if (t < kSaturationLevel) target.push_back(t);
    }
    if (target.empty()) {
      for (std::size_t i = 0; i < n; ++i) target.push_back(oe.data()[i * 3 + c]);
    }
    std::sort(source.begin(), source.end());
    std::sort(target.begin(), target.end());
    const double m = static_cast<double>(target.size());

    for (std::size_t i = 0; i < n; ++i) {
      const float v = ue.data()[i * 3 + c];
      const auto lo = std::lower_bound(source.begin(), source.end(), v);
      const auto hi = std::upper_bound(lo, source.end(), v);
      const double less = static_cast<double>(lo - source.begin());
      const double equal = static_cast<double>(hi - lo);
      const double q = (less + (equal - 1.0) * 0.5 + 0.5) / static_cast<double>(n);
      const double pos = std::clamp(q * m - 0.5, 0.0, m - 1.0);
      const std::size_t k = static_cast<std::size_t>(pos);
      const std::size_t k1 = std::min(k + 1, target.size() - 1);
      const double a = pos - static_cast<double>(k);
      const double mapped = (1.0 - a) * target[k] + a * target[k1];
      out.data()[i * 3 + c] = static_cast<float>(std::clamp(mapped, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace expfuse
