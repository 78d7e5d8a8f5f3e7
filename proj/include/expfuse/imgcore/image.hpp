#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace expfuse {

// Single-channel H x W float plane, row-major.
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  float& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Plane&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// H x W x 3 image with values in [0,1], interleaved RGB, row-major.
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  float operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const ImageRGB&) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// Luminance in [0,1] and zero-centred chroma in [-0.5,0.5].
struct ImageYUV {
  Plane y;
  Plane u;
  Plane v;

  int height() const noexcept { return y.height(); }
  int width() const noexcept { return y.width(); }
};

// 1 = occluded / invalid, 0 = valid.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t operator()(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  // Fraction of pixels marked 1.
  double coverage() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

// Dense displacement field in pixels, interleaved (dx, dy).
class FlowField {
 public:
  FlowField() = default;
  FlowField(int height, int width, float dx = 0.0f, float dy = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }

  float& dx(int y, int x) { return data_[index(y, x)]; }
  float& dy(int y, int x) { return data_[index(y, x) + 1]; }
  float dx(int y, int x) const { return data_[index(y, x)]; }
  float dy(int y, int x) const { return data_[index(y, x) + 1]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const FlowField&) const = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 2;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// Throws ValidationError when any value is non-finite or outside [0,1].
void validate(const ImageRGB& img, const char* what = "image");
void validate(const FlowField& flow, const char* what = "flow");

template <class A, class B>
bool same_size(const A& a, const B& b) {
  return a.height() == b.height() && a.width() == b.width();
}

void require_same_size(int h0, int w0, int h1, int w1, const char* what);

template <class A, class B>
void require_same_size(const A& a, const B& b, const char* what) {
  require_same_size(a.height(), a.width(), b.height(), b.width(), what);
}

}  // namespace expfuse
