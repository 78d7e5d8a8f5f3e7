#include "expfuse/imgcore/image.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "expfuse/imgcore/error.hpp"

namespace expfuse {

const char* to_string(IoErrc code) {
  switch (code) {
    case IoErrc::kFileNotFound: return "file not found";
    case IoErrc::kUnsupportedFormat: return "unsupported format";
    case IoErrc::kBitDepthMismatch: return "bit-depth mismatch";
    case IoErrc::kWriteFailed: return "write failed";
    case IoErrc::kCorruptData: return "corrupt data";
  }
  return "unknown i/o error";
}

Plane::Plane(int height, int width, float fill) : height_(height), width_(width) {
  require(height >= 0 && width >= 0, "plane dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

ImageRGB::ImageRGB(int height, int width, float fill) : height_(height), width_(width) {
  require(height >= 0 && width >= 0, "image dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  require(height >= 0 && width >= 0, "mask dimensions must be non-negative");
  require(fill <= 1, "mask values must be 0 or 1");
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

double BinaryMask::coverage() const {
  if (data_.empty()) return 0.0;
  const auto ones = std::accumulate(data_.begin(), data_.end(), std::size_t{0});
  return static_cast<double>(ones) / static_cast<double>(data_.size());
}

FlowField::FlowField(int height, int width, float dx, float dy) : height_(height), width_(width) {
  require(height >= 0 && width >= 0, "flow dimensions must be non-negative");
  data_.resize(static_cast<std::size_t>(height) * width * 2);
  for (std::size_t i = 0; i < data_.size(); i += 2) {
    data_[i] = dx;
    data_[i + 1] = dy;
  }
}

void validate(const ImageRGB& img, const char* what) {
  for (float v : img.data()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains non-finite values");
    if (v < 0.0f || v > 1.0f) throw ValidationError(std::string(what) + " has values outside [0,1]");
  }
}

void validate(const FlowField& flow, const char* what) {
  const float limit = static_cast<float>(std::max(flow.height(), flow.width()));
  for (std::size_t i = 0; i < flow.data().size(); i += 2) {
    const float dx = flow.data()[i];
    const float dy = flow.data()[i + 1];
    if (!std::isfinite(dx) || !std::isfinite(dy))
      throw ValidationError(std::string(what) + " contains non-finite values");
    if (std::hypot(dx, dy) > limit)
      throw ValidationError(std::string(what) + " has displacements larger than the frame");
  }
}

void require_same_size(int h0, int w0, int h1, int w1, const char* what) {
  if (h0 != h1 || w0 != w1) {
    throw ValidationError(std::string(what) + ": dimension mismatch (" + std::to_string(h0) + "x" +
                          std::to_string(w0) + " vs " + std::to_string(h1) + "x" +
                          std::to_string(w1) + ")");
  }
}

}  // namespace expfuse
