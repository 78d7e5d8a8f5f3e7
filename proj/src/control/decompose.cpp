#include "expfuse/control/decompose.hpp"

#include <cmath>

#include "expfuse/imgcore/color.hpp"

namespace expfuse::control {

Plane structure_map(const Plane& luma, const BinaryMask& mask) {
  require_same_size(luma, mask, "structure_map");
  const auto y = luma.data();
  const auto m = mask.data();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw ValidationError("structure_map: non-finite luminance");
    if (!m[i]) {
      sum += y[i];
      ++count;
    }
  }
  Plane s(luma.height(), luma.width());
  if (count == 0) return s;
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!m[i]) ss += (y[i] - mean) * (y[i] - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(count));
  if (sigma <= kVarianceGuard) return s;
  auto out = s.data();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!m[i]) out[i] = static_cast<float>((y[i] - mean) / sigma);
  return s;
}

GuidancePack decompose(const ImageRGB& guidance, const BinaryMask& mask) {
  validate(guidance, "guidance");
  require_same_size(guidance, mask, "decompose");
  ImageYUV yuv = rgb_to_yuv(guidance);
  GuidancePack p{structure_map(yuv.y, mask), std::move(yuv.u), std::move(yuv.v), mask};
  auto u = p.u.data();
  auto v = p.v.data();
  const auto m = mask.data();
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) u[i] = v[i] = 0.0f;
  return p;
}

GuidanceTensors guidance_tensors(std::span<const GuidancePack> packs) {
  require(!packs.empty(), "guidance_tensors: no packs");
  const int h = packs[0].height();
  const int w = packs[0].width();
  const int n = static_cast<int>(packs.size());
  GuidanceTensors t{nn::Tensor<float>(nn::Shape{n, 2, h, w}), nn::Tensor<float>(nn::Shape{n, 3, h, w})};
  for (int k = 0; k < n; ++k) {
    const GuidancePack& p = packs[k];
    require(p.height() == h && p.width() == w, "guidance_tensors: packs differ in size");
    const auto m = p.mask.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const float valid = m[i] ? 0.0f : 1.0f;
      t.structure.plane(k, 0)[i] = p.s.data()[i];
      t.structure.plane(k, 1)[i] = valid;
      t.chroma.plane(k, 0)[i] = p.u.data()[i];
      t.chroma.plane(k, 1)[i] = p.v.data()[i];
      t.chroma.plane(k, 2)[i] = valid;
    }
  }
  return t;
}

}  // namespace expfuse::control
