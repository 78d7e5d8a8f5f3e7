#pragma once

#include <span>

#include "expfuse/imgcore/image.hpp"
#include "expfuse/nn/tensor.hpp"

namespace expfuse::control {

// Standard deviations at or below this are treated as constant luminance.
inline constexpr double kVarianceGuard = 1e-6;

// Structure / chroma split of the pre-aligned guidance. `mask` is the
// occlusion mask (1 = occluded); S and C are zero wherever it is set.
struct GuidancePack {
  Plane s;
  Plane u;
  Plane v;
  BinaryMask mask;

  int height() const noexcept { return s.height(); }
  int width() const noexcept { return s.width(); }
};

// Luminance normalised by its global mean and standard deviation over
// unmasked pixels; zero at masked pixels and when the deviation is degenerate.
Plane structure_map(const Plane& luma, const BinaryMask& mask);

GuidancePack decompose(const ImageRGB& guidance, const BinaryMask& mask);

// Network inputs: structure (N, 2, H, W) = [S, valid] and
// chroma (N, 3, H, W) = [U, V, valid], valid = 1 - mask.
struct GuidanceTensors {
  nn::Tensor<float> structure;
  nn::Tensor<float> chroma;
};

GuidanceTensors guidance_tensors(std::span<const GuidancePack> packs);

}  // namespace expfuse::control
