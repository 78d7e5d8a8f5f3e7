#pragma once

#include "expfuse/imgcore/image.hpp"

namespace expfuse {

// Bilinear resampling of the {0,1} mask (pixel-centre aligned) followed by a
// 0.5 threshold; the result is strictly binary.
BinaryMask resize_mask(const BinaryMask& mask, int out_h, int out_w);

// Intersection-over-union of the 1-pixels. Two empty masks give 1.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// out = (1 - mask) * img, exactly zero where the mask is set.
ImageRGB apply_mask(const ImageRGB& img, const BinaryMask& mask);

}  // namespace expfuse
