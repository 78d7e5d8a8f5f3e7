#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "expfuse/imgcore/image.hpp"
#include "expfuse/prealign/prealign.hpp"

namespace expfuse::datasynth {

// Independent stream per (seed, index, salt); serial and parallel builds agree.
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0);

// Linear scene radiance, interleaved RGB, strictly positive and unbounded.
class RadianceMap {
 public:
  RadianceMap() = default;
  RadianceMap(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  float& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  float operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

struct SceneParams {
  int height = 96;
  int width = 96;
  float background_min = 0.01f;  // radiance range of ordinary surfaces
  float background_max = 0.8f;
  float light_min = 1.5f;  // radiance range of light sources
  float light_max = 16.0f;
};

// Layered gradient background, disks, value-noise textured rectangles and one
// or two light sources.
RadianceMap procedural_scene(std::uint64_t seed, const SceneParams& params = {});

// Display-referred rendering clip((L * 2^ev)^(1/2.2)).
ImageRGB render_exposure(const RadianceMap& radiance, double ev);

// Global tone curve L' / (1 + L') with L' = L * 2^ev, then gamma 1/2.2.
ImageRGB render_tonemapped(const RadianceMap& radiance, double ev = 0.0);

inline constexpr double kGamma = 2.2;

struct ExposureTriplet {
  ImageRGB ue;
  ImageRGB oe;
  ImageRGB gt;
  double ev_gap = 0.0;  // stops between ue and oe

  void validate() const;
};

// oe at ev 0, ue at -gap, gt tone-mapped at ev 0.
ExposureTriplet procedural_triplet(std::uint64_t seed, double ev_gap, const SceneParams& params = {});

struct VideoClip {
  std::vector<ImageRGB> frames;

  void validate() const;
};

// Moving textured rectangles over a static textured background, with the
// exact first <-> last frame correspondences.
struct ProceduralClip {
  VideoClip clip;
  FlowField first_to_last;  // first(x) = last(x + f(x))
  FlowField last_to_first;
  // Pixels of the first frame whose correspondence in the last frame shows a
  // different surface. Correspondences leaving the frame are not counted.
  BinaryMask occluded;
};

struct ClipParams {
  int height = 64;
  int width = 64;
  int min_frames = 3;
  int max_frames = 9;
  int min_objects = 1;
  int max_objects = 3;
  double max_speed = 2.5;  // px per frame
};

ProceduralClip procedural_clip(std::uint64_t seed, const ClipParams& params = {});

// A single textured square translating `shift` px right over `frames` frames.
ProceduralClip translating_square_clip(int size, int square, int shift, int frames, std::uint64_t seed);

BinaryMask pseudo_occlusion_from_clip(const VideoClip& clip, const ConsistencyParams& params,
                                      const FlowEstimator& estimator);
BinaryMask pseudo_occlusion_from_clip(const VideoClip& clip, const ConsistencyParams& params = {});

struct SynthSample {
  ImageRGB oe;
  ImageRGB guidance;  // (1 - mask) * ue
  ImageRGB gt;
  BinaryMask mask;
  ImageRGB ue;  // unmasked ue patch, kept for evaluation

  // Throws ValidationError unless sizes agree and guidance is zero under the mask.
  void validate() const;
};

// Seeded crop of the triplet to patch x patch; the mask is resized to the patch.
SynthSample make_sample(const ExposureTriplet& triplet, const BinaryMask& mask, std::uint64_t seed,
                        int patch = 64);

struct DatasetConfig {
  int patch = 64;
  SceneParams scene;
  ClipParams clip;
  ConsistencyParams consistency;
  double min_gap = 5.0;  // stops, uniform in [min_gap, max_gap]
  double max_gap = 9.0;
  int mask_pool = 8;  // pseudo masks harvested before sampling
  double empty_mask_prob = 0.1;
  int masks_per_pair = 1;  // samples cut from each static triplet
  // Optional external layouts: one folder per scene of exposure-sorted PNGs
  // plus gt.png, and one folder per clip of frame PNGs.
  std::optional<std::filesystem::path> external_scenes;
  std::optional<std::filesystem::path> external_clips;

  void validate() const;
};

struct ManifestEntry {
  std::size_t index = 0;
  std::string oe, ue, guidance, gt, mask;  // paths relative to the manifest
  double ev_gap = 0.0;
  std::uint64_t seed = 0;
  double mask_coverage = 0.0;
  std::string source;  // "procedural" or the external scene folder name
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes count samples as 16-bit PNGs plus manifest.jsonl under out_dir.
Manifest build_dataset(std::size_t count, std::uint64_t seed, const std::filesystem::path& out_dir,
                       const DatasetConfig& config = {});

// The samples exactly as build_dataset would write them, without touching disk.
std::vector<SynthSample> synthesize(std::size_t count, std::uint64_t seed, const DatasetConfig& config,
                                    std::vector<ManifestEntry>* entries = nullptr);

Manifest read_manifest(const std::filesystem::path& dir_or_file);
// Loads and re-validates one sample.
SynthSample load_sample(const Manifest& manifest, std::size_t i);

// Exposure-ordered triplets from an external scene folder layout.
std::vector<std::pair<std::string, ExposureTriplet>> load_external_scenes(const std::filesystem::path& dir);
std::vector<VideoClip> load_external_clips(const std::filesystem::path& dir);

}  // namespace expfuse::datasynth
