#pragma once

#include "expfuse/imgcore/image.hpp"

namespace expfuse {

// BT.601 full-range coefficients. Chroma is zero-centred:
//   Y =  0.299 R + 0.587 G + 0.114 B
//   U = (B - Y) * 0.5 / (1 - 0.114)
//   V = (R - Y) * 0.5 / (1 - 0.299)
// so U, V lie in [-0.5, 0.5] for RGB in [0,1].
namespace bt601 {
inline constexpr double kR = 0.299;
inline constexpr double kG = 0.587;
inline constexpr double kB = 0.114;
inline constexpr double kUScale = 0.5 / (1.0 - kB);
inline constexpr double kVScale = 0.5 / (1.0 - kR);
}  // namespace bt601

inline float luma(float r, float g, float b) {
  return static_cast<float>(bt601::kR * r + bt601::kG * g + bt601::kB * b);
}

ImageYUV rgb_to_yuv(const ImageRGB& img);

// Output is clipped to [0,1].
ImageRGB yuv_to_rgb(const ImageYUV& img);

Plane luminance(const ImageRGB& img);

}  // namespace expfuse
