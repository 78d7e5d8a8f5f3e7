#pragma once

#include <filesystem>
#include <memory>

#include "expfuse/imgcore/image.hpp"

namespace expfuse {

// Forward-backward consistency thresholds. A pixel is occluded when
//   |f(x) + b(x + f(x))|^2 > alpha1 * (|f(x)|^2 + |b(x + f(x))|^2) + alpha2.
struct ConsistencyParams {
  double alpha1 = 0.01;  // relative tolerance
  double alpha2 = 0.5;   // absolute tolerance, px^2

  void validate() const;
};

struct BidirectionalFlow {
  FlowField oe_to_ue;  // oe(x) ~ ue(x + f(x))
  FlowField ue_to_oe;  // ue(x) ~ oe(x + f(x))
};

class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;

  // Dense flow f with src(x + f(x)) ~ dst(x).
  virtual FlowField estimate(const ImageRGB& src, const ImageRGB& dst) const = 0;

  // Both directions between a base frame and a guidance frame.
  virtual BidirectionalFlow estimate_bidirectional(const ImageRGB& oe, const ImageRGB& ue) const;
};

// Dense estimator on luminance. A Gaussian pyramid is built down to the first
// level no larger than `match_size`; that level is initialised by exhaustive
// block matching, then every level is refined by iterative warp / windowed
// least-squares updates with median filtering and upsampled-and-rescaled to
// the next finer level.
class PyramidFlowEstimator final : public FlowEstimator {
 public:
  struct Params {
    int max_levels = 6;
    int min_level_size = 8;
    int match_size = 96;     // px, longest side of the block-matching level
    int search_radius = 12;  // px at the block-matching level
    int patch_radius = 3;
    int iterations = 4;
    double window_sigma = 1.5;
    int median_radius = 1;
    double regularization = 1e-4;
  };

  PyramidFlowEstimator() = default;
  explicit PyramidFlowEstimator(Params params) : params_(params) {}

  FlowField estimate(const ImageRGB& src, const ImageRGB& dst) const override;

  const Params& params() const noexcept { return params_; }

 private:
  Params params_;
};

// Serves flows computed elsewhere (e.g. loaded from FLO1 files).
class PrecomputedFlow final : public FlowEstimator {
 public:
  PrecomputedFlow(FlowField oe_to_ue, FlowField ue_to_oe);

  static PrecomputedFlow from_files(const std::filesystem::path& oe_to_ue,
                                    const std::filesystem::path& ue_to_oe);

  // Directional queries are ambiguous for stored fields; always throws StateError.
  FlowField estimate(const ImageRGB& src, const ImageRGB& dst) const override;
  BidirectionalFlow estimate_bidirectional(const ImageRGB& oe, const ImageRGB& ue) const override;

 private:
  BidirectionalFlow flows_;
};

// Per-channel histogram specification of `ue` onto the distribution of `oe`,
// ignoring oe samples >= kSaturationLevel. Only meant as flow-estimator input.
inline constexpr float kSaturationLevel = 0.98f;
ImageRGB intensity_match(const ImageRGB& ue, const ImageRGB& oe);

// out(x) = img(x + flow(x)), bilinear, sample positions clamped to the frame.
ImageRGB backward_warp(const ImageRGB& img, const FlowField& flow);
Plane backward_warp(const Plane& img, const FlowField& flow);

BinaryMask occlusion_mask(const FlowField& fwd, const FlowField& bwd, const ConsistencyParams& params);

struct PreAlignResult {
  ImageRGB guidance;  // (1 - mask) * W(ue, flow_fwd)
  BinaryMask mask;
  FlowField flow_fwd;  // oe -> ue
  FlowField flow_bwd;  // ue -> oe
};

PreAlignResult prealign(const ImageRGB& ue, const ImageRGB& oe, const ConsistencyParams& params,
                        const FlowEstimator& estimator);
PreAlignResult prealign(const ImageRGB& ue, const ImageRGB& oe, const ConsistencyParams& params = {});

}  // namespace expfuse
