#include "expfuse/prealign/prealign.hpp"

#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/mask.hpp"

namespace expfuse {

PreAlignResult prealign(const ImageRGB& ue, const ImageRGB& oe, const ConsistencyParams& params,
                        const FlowEstimator& estimator) {
  require_same_size(ue, oe, "prealign");
  require(!oe.empty(), "prealign: empty input");
  params.validate();

  // Brightness matching only feeds the flow estimator; the original ue is warped.
  const ImageRGB matched = intensity_match(ue, oe);
  BidirectionalFlow flows = estimator.estimate_bidirectional(oe, matched);

  PreAlignResult out;
  out.mask = occlusion_mask(flows.oe_to_ue, flows.ue_to_oe, params);
  out.guidance = apply_mask(backward_warp(ue, flows.oe_to_ue), out.mask);
  out.flow_fwd = std::move(flows.oe_to_ue);
  out.flow_bwd = std::move(flows.ue_to_oe);
  return out;
}

PreAlignResult prealign(const ImageRGB& ue, const ImageRGB& oe, const ConsistencyParams& params) {
  return prealign(ue, oe, params, PyramidFlowEstimator{});
}

}  // namespace expfuse
