#include "expfuse/nn/image_tensor.hpp"

#include <algorithm>

namespace expfuse::nn {

Tensor<float> images_to_tensor(std::span<const ImageRGB> images) {
  require(!images.empty(), "images_to_tensor: no images");
  const int h = images[0].height();
  const int w = images[0].width();
  Tensor<float> t(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_size(images[n], images[0], "images_to_tensor");
    const auto src = images[n].data();
    for (int c = 0; c < 3; ++c) {
      float* dst = t.plane(static_cast<int>(n), c);
      for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) dst[i] = src[i * 3 + c];
    }
  }
  return t;
}

ImageRGB tensor_to_image(const Tensor<float>& t, int n) {
  const Shape s = t.shape();
  require(s.c == 3 && n >= 0 && n < s.n, "tensor_to_image: expected (N,3,H,W) tensor, got " + s.str());
  ImageRGB img(s.h, s.w);
  auto dst = img.data();
  for (int c = 0; c < 3; ++c) {
    const float* src = t.plane(n, c);
    for (std::size_t i = 0; i < s.plane(); ++i) dst[i * 3 + c] = std::clamp(src[i], 0.0f, 1.0f);
  }
  return img;
}

Tensor<float> masks_to_tensor(std::span<const BinaryMask> masks) {
  require(!masks.empty(), "masks_to_tensor: no masks");
  Tensor<float> t(Shape{static_cast<int>(masks.size()), 1, masks[0].height(), masks[0].width()});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    require_same_size(masks[n], masks[0], "masks_to_tensor");
    float* dst = t.plane(static_cast<int>(n), 0);
    const auto src = masks[n].data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 1.0f : 0.0f;
  }
  return t;
}

}  // namespace expfuse::nn
