#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "expfuse/imgcore/error.hpp"

namespace expfuse::nn {

// NCHW extents. Vectors are stored as (n, c, 1, 1), scalars as (1, 1, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Fixed alignment keeps vectorised kernels on the same code path (and hence
// the same summation order) wherever a buffer lands on the heap.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0, "negative tensor extent");
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    require(data_.size() == shape.numel(), "tensor data size does not match shape " + shape.str());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  // Start of channel plane (n, c).
  T* plane(int n, int c) noexcept { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
  const T* plane(int n, int c) const noexcept {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }

  T& operator()(int n, int c, int y, int x) noexcept { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
  T operator()(int n, int c, int y, int x) const noexcept {
    return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  // Samples [first, first + count) along the batch axis.
  Tensor batch_slice(int first, int count) const {
    require(first >= 0 && count >= 0 && first + count <= shape_.n, "batch_slice out of range");
    Shape s = shape_;
    s.n = count;
    const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
    return Tensor(s, std::vector<T>(data_.begin() + first * per, data_.begin() + (first + count) * per));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T, AlignedAllocator<T>> data_;
};

// Concatenates tensors along the batch axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "stack_batch: no tensors");
  Shape s = parts.front().shape();
  s.n = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    require(p.shape().c == s.c && p.shape().h == s.h && p.shape().w == s.w, "stack_batch: shape mismatch");
    s.n += p.shape().n;
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>(s, std::move(data));
}

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    throw ValidationError(what + ": expected shape " + expected.str() + ", got " + t.shape().str());
}

}  // namespace expfuse::nn
