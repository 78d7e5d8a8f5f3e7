#pragma once

#include <filesystem>
#include <optional>

#include "expfuse/imgcore/image.hpp"

namespace expfuse {

enum class BitDepth { k8 = 8, k16 = 16 };

// Loads an 8- or 16-bit PNG (gray, gray+alpha, RGB or RGBA; alpha is dropped,
// gray is replicated) scaled to [0,1]. When `expected` is given, a file with a
// different bit depth raises IoErrc::kBitDepthMismatch.
ImageRGB load_image(const std::filesystem::path& path,
                    std::optional<BitDepth> expected = std::nullopt);

void save_image(const ImageRGB& img, const std::filesystem::path& path,
                BitDepth depth = BitDepth::k8);

// Masks are single-channel 8-bit PNG, 255 = occluded. Loading thresholds at 128.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

// Single-channel 8-bit PNG of a plane clipped to [0,1] (diagnostics).
void save_plane(const Plane& plane, const std::filesystem::path& path);

// Dense flow file: "FLO1" | u32 height | u32 width | f32 (dx, dy) row-major,
// all little-endian.
FlowField load_flow(const std::filesystem::path& path);
void save_flow(const FlowField& flow, const std::filesystem::path& path);

}  // namespace expfuse
