#include "expfuse/imgcore/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "expfuse/imgcore/error.hpp"

namespace expfuse {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_for_read(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw IoError(IoErrc::kFileNotFound, path.string());
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError(IoErrc::kFileNotFound, path.string());
  return f;
}

// Decoded PNG samples, channels interleaved, stored widened to 16 bits.
struct RawPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

RawPng read_png(const std::filesystem::path& path) {
  FilePtr file = open_for_read(path);
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), file.get()) != sig.size() ||
      png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
    throw IoError(IoErrc::kUnsupportedFormat, path.string() + " is not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(IoErrc::kCorruptData, "libpng initialisation failed");
  }

  RawPng raw;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(IoErrc::kCorruptData, path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, static_cast<int>(sig.size()));
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    depth = 8;
  }
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  raw.samples.resize(count);
  if (depth == 16) {
    std::memcpy(raw.samples.data(), buffer.data(), count * sizeof(std::uint16_t));
  } else {
    for (std::size_t i = 0; i < count; ++i) raw.samples[i] = buffer[i];
  }
  return raw;
}

void write_png(const std::filesystem::path& path, int height, int width, int channels, int depth,
               const std::vector<std::uint16_t>& samples) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError(IoErrc::kWriteFailed, path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(IoErrc::kWriteFailed, "libpng initialisation failed");
  }
  const std::size_t row_samples = static_cast<std::size_t>(width) * channels;
  const std::size_t rowbytes = row_samples * (depth / 8);
  std::vector<unsigned char> buffer(rowbytes * height);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (depth == 16) {
      buffer[2 * i] = static_cast<unsigned char>(samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(IoErrc::kWriteFailed, path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint16_t quantize(float v, int max_code) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint16_t>(std::lround(c * static_cast<float>(max_code)));
}

}  // namespace

ImageRGB load_image(const std::filesystem::path& path, std::optional<BitDepth> expected) {
  const RawPng raw = read_png(path);
  if (raw.bit_depth != 8 && raw.bit_depth != 16)
    throw IoError(IoErrc::kUnsupportedFormat, path.string() + ": bit depth " + std::to_string(raw.bit_depth));
  if (expected && static_cast<int>(*expected) != raw.bit_depth) {
    throw IoError(IoErrc::kBitDepthMismatch, path.string() + ": expected " +
                                                 std::to_string(static_cast<int>(*expected)) +
                                                 "-bit, found " + std::to_string(raw.bit_depth));
  }
  const float scale = 1.0f / (raw.bit_depth == 16 ? 65535.0f : 255.0f);
  const bool gray = raw.channels <= 2;
  ImageRGB img(raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
      for (int c = 0; c < 3; ++c) img(y, x, c) = raw.samples[base + (gray ? 0 : c)] * scale;
    }
  }
  return img;
}

void save_image(const ImageRGB& img, const std::filesystem::path& path, BitDepth depth) {
  require(!img.empty(), "save_image: empty image");
  const int max_code = depth == BitDepth::k16 ? 65535 : 255;
  std::vector<std::uint16_t> samples(img.data().size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = quantize(img.data()[i], max_code);
  write_png(path, img.height(), img.width(), 3, static_cast<int>(depth), samples);
}

BinaryMask load_mask(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  const int half = raw.bit_depth == 16 ? 32768 : 128;
  BinaryMask mask(raw.height, raw.width);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.data()[i] = raw.samples[i * raw.channels] >= half ? 1 : 0;
  return mask;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  require(mask.size() > 0, "save_mask: empty mask");
  std::vector<std::uint16_t> samples(mask.size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = mask.data()[i] ? 255 : 0;
  write_png(path, mask.height(), mask.width(), 1, 8, samples);
}

void save_plane(const Plane& plane, const std::filesystem::path& path) {
  require(plane.size() > 0, "save_plane: empty plane");
  std::vector<std::uint16_t> samples(plane.size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = quantize(plane.data()[i], 255);
  write_png(path, plane.height(), plane.width(), 1, 8, samples);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

FlowField load_flow(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw IoError(IoErrc::kFileNotFound, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::kFileNotFound, path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "FLO1", 4) != 0)
    throw IoError(IoErrc::kUnsupportedFormat, path.string() + ": bad flow magic");
  const std::uint32_t h = get_u32(in);
  const std::uint32_t w = get_u32(in);
  if (!in || h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16))
    throw IoError(IoErrc::kCorruptData, path.string() + ": bad flow header");
  FlowField flow(static_cast<int>(h), static_cast<int>(w));
  for (float& v : flow.data()) {
    const std::uint32_t bits = get_u32(in);
    v = std::bit_cast<float>(bits);
  }
  if (!in) throw IoError(IoErrc::kCorruptData, path.string() + ": truncated flow data");
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError(IoErrc::kCorruptData, path.string() + ": trailing bytes after flow data");
  for (float v : flow.data())
    if (!std::isfinite(v)) throw IoError(IoErrc::kCorruptData, path.string() + ": non-finite flow");
  return flow;
}

void save_flow(const FlowField& flow, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrc::kWriteFailed, path.string());
  out.write("FLO1", 4);
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  for (float v : flow.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError(IoErrc::kWriteFailed, path.string());
}

}  // namespace expfuse
