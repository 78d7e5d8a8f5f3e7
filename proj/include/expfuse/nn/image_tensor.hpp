#pragma once

#include <span>

#include "expfuse/imgcore/image.hpp"
#include "expfuse/nn/tensor.hpp"

namespace expfuse::nn {

// (N, 3, H, W) planar batch from interleaved RGB images of equal size.
Tensor<float> images_to_tensor(std::span<const ImageRGB> images);
inline Tensor<float> image_to_tensor(const ImageRGB& img) { return images_to_tensor(std::span(&img, 1)); }

// Sample n of a (N, 3, H, W) tensor, clipped to [0,1].
ImageRGB tensor_to_image(const Tensor<float>& t, int n = 0);

// (N, 1, H, W) tensor with 1 where the mask is set.
Tensor<float> masks_to_tensor(std::span<const BinaryMask> masks);

}  // namespace expfuse::nn
