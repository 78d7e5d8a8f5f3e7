#pragma once

#include <span>

#include "expfuse/imgcore/image.hpp"

namespace expfuse::evalcli {

// Structural fidelity of a fused image to a stack of exposures, on luminance.
// Per window every input patch x_k is split into contrast c_k = |x_k - mean|
// and structure s_k = (x_k - mean) / c_k. The desired patch has the largest
// input contrast and the structure
//   s = sum w_k s_k / sum w_k,  w_k = c_k^p,  p = tan(pi R / 2),
//   R = |sum (x_k - mean_k)| / sum c_k,
// renormalised to unit length. The window score is
//   (2 cov(desired, fused) + c2) / (var(desired) + var(fused) + c2)
// and the image score is the mean over all windows.
struct MefSsimParams {
  int window = 8;
  int stride = 1;
  double c2 = 0.03 * 0.03;  // stabiliser for flat windows (unit dynamic range)
  double max_exponent = 64.0;  // cap on p when the inputs agree (R -> 1)

  void validate() const;
};

double mef_ssim(const ImageRGB& fused, std::span<const ImageRGB> inputs, const MefSsimParams& params = {});

// Peak 1. Identical images give +infinity.
double psnr(const ImageRGB& a, const ImageRGB& b);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L 1) averaged over
// the valid windows of each channel, then over channels.
double ssim(const ImageRGB& a, const ImageRGB& b);

}  // namespace expfuse::evalcli
