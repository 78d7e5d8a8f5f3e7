#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "expfuse/imgcore/color.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"
#include "expfuse/prealign/prealign.hpp"

namespace expfuse {
namespace {

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (float& v : k) v = static_cast<float>(v / sum);
  return k;
}

Plane blur(const Plane& in, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int h = in.height();
  const int w = in.width();
  Plane tmp(h, w);
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

// Coarse pixel i covers fine pixels 2i, 2i+1 (centre at 2i + 0.5).
Plane downsample(const Plane& in) {
  const Plane smooth = blur(in, 0.8);
  const int h = (in.height() + 1) / 2;
  const int w = (in.width() + 1) / 2;
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int y1 = std::min(2 * y + 1, in.height() - 1);
      const int x1 = std::min(2 * x + 1, in.width() - 1);
      out(y, x) = 0.25f * (smooth(2 * y, 2 * x) + smooth(2 * y, x1) + smooth(y1, 2 * x) + smooth(y1, x1));
    }
  return out;
}

FlowField upsample_flow(const FlowField& coarse, int h, int w) {
  FlowField out(h, w);
  const int ch = coarse.height();
  const int cw = coarse.width();
  for (int y = 0; y < h; ++y) {
    const float cy = std::clamp((y - 0.5f) * 0.5f, 0.0f, static_cast<float>(ch - 1));
    const int y0 = static_cast<int>(cy);
    const int y1 = std::min(y0 + 1, ch - 1);
    const float ay = cy - y0;
    for (int x = 0; x < w; ++x) {
      const float cx = std::clamp((x - 0.5f) * 0.5f, 0.0f, static_cast<float>(cw - 1));
      const int x0 = static_cast<int>(cx);
      const int x1 = std::min(x0 + 1, cw - 1);
      const float ax = cx - x0;
      auto lerp = [&](auto get) {
        const float top = (1 - ax) * get(y0, x0) + ax * get(y0, x1);
        const float bottom = (1 - ax) * get(y1, x0) + ax * get(y1, x1);
        return (1 - ay) * top + ay * bottom;
      };
      out.dx(y, x) = 2.0f * lerp([&](int yy, int xx) { return coarse.dx(yy, xx); });
      out.dy(y, x) = 2.0f * lerp([&](int yy, int xx) { return coarse.dy(yy, xx); });
    }
  }
  return out;
}

void gradients(const Plane& img, Plane& gx, Plane& gy) {
  const int h = img.height();
  const int w = img.width();
  gx = Plane(h, w);
  gy = Plane(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx(y, x) = 0.5f * (img(y, std::min(x + 1, w - 1)) - img(y, std::max(x - 1, 0)));
      gy(y, x) = 0.5f * (img(std::min(y + 1, h - 1), x) - img(std::max(y - 1, 0), x));
    }
}

void median_filter(FlowField& flow, int radius) {
  if (radius <= 0) return;
  const int h = flow.height();
  const int w = flow.width();
  const FlowField src = flow;
  std::vector<float> bx;
  std::vector<float> by;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bx.clear();
      by.clear();
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xx = std::clamp(x + dx, 0, w - 1);
          bx.push_back(src.dx(yy, xx));
          by.push_back(src.dy(yy, xx));
        }
      const auto mid = bx.size() / 2;
      std::nth_element(bx.begin(), bx.begin() + mid, bx.end());
      std::nth_element(by.begin(), by.begin() + mid, by.end());
      flow.dx(y, x) = bx[mid];
      flow.dy(y, x) = by[mid];
    }
}

Plane box3(const Plane& in) {
  const int h = in.height();
  const int w = in.width();
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) acc += in(std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
      out(y, x) = acc;
    }
  return out;
}

Plane residual_cost(const Plane& src, const Plane& dst, const FlowField& flow) {
  const Plane warped = backward_warp(src, flow);
  Plane sq(dst.height(), dst.width());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const float d = warped.data()[i] - dst.data()[i];
    sq.data()[i] = d * d;
  }
  return box3(sq);
}

// Windowed least-squares updates. An update is kept per pixel only when it
// lowers the local 3x3 warping residual, so window bleeding across motion
// boundaries cannot override a better match.
constexpr float kAcceptRatio = 0.5f;

void refine_level(const Plane& src, const Plane& dst, FlowField& flow,
                  const PyramidFlowEstimator::Params& p) {
  const int h = dst.height();
  const int w = dst.width();
  Plane dgx, dgy;
  gradients(dst, dgx, dgy);
  for (int it = 0; it < p.iterations; ++it) {
    const Plane warped = backward_warp(src, flow);
    Plane wgx, wgy;
    gradients(warped, wgx, wgy);
    Plane a11(h, w), a12(h, w), a22(h, w), b1(h, w), b2(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float ix = 0.5f * (wgx(y, x) + dgx(y, x));
        const float iy = 0.5f * (wgy(y, x) + dgy(y, x));
        const float it_ = warped(y, x) - dst(y, x);
        a11(y, x) = ix * ix;
        a12(y, x) = ix * iy;
        a22(y, x) = iy * iy;
        b1(y, x) = ix * it_;
        b2(y, x) = iy * it_;
      }
    a11 = blur(a11, p.window_sigma);
    a12 = blur(a12, p.window_sigma);
    a22 = blur(a22, p.window_sigma);
    b1 = blur(b1, p.window_sigma);
    b2 = blur(b2, p.window_sigma);
    const double lambda = p.regularization;
    FlowField candidate = flow;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double m11 = a11(y, x) + lambda;
        const double m22 = a22(y, x) + lambda;
        const double m12 = a12(y, x);
        const double det = m11 * m22 - m12 * m12;
        if (det <= 0.0) continue;
        const double du = -(m22 * b1(y, x) - m12 * b2(y, x)) / det;
        const double dv = -(m11 * b2(y, x) - m12 * b1(y, x)) / det;
        candidate.dx(y, x) += static_cast<float>(std::clamp(du, -1.0, 1.0));
        candidate.dy(y, x) += static_cast<float>(std::clamp(dv, -1.0, 1.0));
      }
    median_filter(candidate, p.median_radius);

    const Plane old_cost = residual_cost(src, dst, flow);
    const Plane new_cost = residual_cost(src, dst, candidate);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (new_cost(y, x) < kAcceptRatio * old_cost(y, x)) {
          flow.dx(y, x) = candidate.dx(y, x);
          flow.dy(y, x) = candidate.dy(y, x);
        }
  }
}

// Winner-take-all SSD search over integer displacements; dst(x) ~ src(x + d).
// Each pixel takes the best of all windows containing it (shiftable windows),
// which keeps motion boundaries from fattening. Displacements leaving the
// frame are excluded; a tiny quadratic prior breaks ties towards small motion.
FlowField block_match(const Plane& src, const Plane& dst, int radius, int patch_radius) {
  const int h = dst.height();
  const int w = dst.width();
  FlowField flow(h, w);
  Plane best(h, w, std::numeric_limits<float>::infinity());
  Plane diff(h, w);
  Plane tmp(h, w);
  const float area = static_cast<float>((2 * patch_radius + 1) * (2 * patch_radius + 1));
  const float prior = 1e-6f * area;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sx = std::clamp(x + dx, 0, w - 1);
          const int sy = std::clamp(y + dy, 0, h - 1);
          const float d = src(sy, sx) - dst(y, x);
          diff(y, x) = d * d;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float acc = 0.0f;
          for (int i = -patch_radius; i <= patch_radius; ++i) acc += diff(y, std::clamp(x + i, 0, w - 1));
          tmp(y, x) = acc;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float acc = 0.0f;
          for (int i = -patch_radius; i <= patch_radius; ++i) acc += tmp(std::clamp(y + i, 0, h - 1), x);
          diff(y, x) = acc;
        }
      // min over window placements: separable erosion of the box cost
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float m = diff(y, x);
          for (int i = -patch_radius; i <= patch_radius; ++i) m = std::min(m, diff(y, std::clamp(x + i, 0, w - 1)));
          tmp(y, x) = m;
        }
      const float reg = prior * static_cast<float>(dx * dx + dy * dy);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (x + dx < 0 || x + dx >= w || y + dy < 0 || y + dy >= h) continue;
          float acc = tmp(y, x);
          for (int i = -patch_radius; i <= patch_radius; ++i) acc = std::min(acc, tmp(std::clamp(y + i, 0, h - 1), x));
          acc += reg;
          if (acc < best(y, x)) {
            best(y, x) = acc;
            flow.dx(y, x) = static_cast<float>(dx);
            flow.dy(y, x) = static_cast<float>(dy);
          }
        }
    }
  }
  return flow;
}

}  // namespace

BidirectionalFlow FlowEstimator::estimate_bidirectional(const ImageRGB& oe, const ImageRGB& ue) const {
  return {estimate(ue, oe), estimate(oe, ue)};
}

FlowField PyramidFlowEstimator::estimate(const ImageRGB& src, const ImageRGB& dst) const {
  require_same_size(src, dst, "estimate_flow");
  require(!src.empty(), "estimate_flow: empty image");
  require(params_.max_levels >= 1 && params_.iterations >= 0, "estimate_flow: bad estimator params");

  std::vector<Plane> src_pyr{luminance(src)};
  std::vector<Plane> dst_pyr{luminance(dst)};
  while (static_cast<int>(src_pyr.size()) < params_.max_levels) {
    const Plane& top = src_pyr.back();
    if (std::max(top.height(), top.width()) <= params_.match_size) break;
    if ((top.height() + 1) / 2 < params_.min_level_size || (top.width() + 1) / 2 < params_.min_level_size)
      break;
    src_pyr.push_back(downsample(top));
    dst_pyr.push_back(downsample(dst_pyr.back()));
  }

  FlowField flow;
  if (params_.search_radius > 0) {
    flow = block_match(src_pyr.back(), dst_pyr.back(), params_.search_radius, params_.patch_radius);
    median_filter(flow, params_.median_radius);
  } else {
    flow = FlowField(src_pyr.back().height(), src_pyr.back().width());
  }
  for (int level = static_cast<int>(src_pyr.size()) - 1; level >= 0; --level) {
    const Plane& s = src_pyr[level];
    if (flow.height() != s.height() || flow.width() != s.width())
      flow = upsample_flow(flow, s.height(), s.width());
    refine_level(s, dst_pyr[level], flow, params_);
  }

  const float limit = static_cast<float>(std::max(src.height(), src.width()));
  for (float& v : flow.data()) {
    if (!std::isfinite(v)) v = 0.0f;
    v = std::clamp(v, -limit, limit);
  }
  return flow;
}

PrecomputedFlow::PrecomputedFlow(FlowField oe_to_ue, FlowField ue_to_oe)
    : flows_{std::move(oe_to_ue), std::move(ue_to_oe)} {
  require_same_size(flows_.oe_to_ue, flows_.ue_to_oe, "precomputed flow");
  validate(flows_.oe_to_ue, "forward flow");
  validate(flows_.ue_to_oe, "backward flow");
}

PrecomputedFlow PrecomputedFlow::from_files(const std::filesystem::path& oe_to_ue,
                                            const std::filesystem::path& ue_to_oe) {
  return PrecomputedFlow(load_flow(oe_to_ue), load_flow(ue_to_oe));
}

FlowField PrecomputedFlow::estimate(const ImageRGB&, const ImageRGB&) const {
  throw StateError("precomputed flow only supports bidirectional queries");
}

BidirectionalFlow PrecomputedFlow::estimate_bidirectional(const ImageRGB& oe, const ImageRGB& ue) const {
  require_same_size(oe, flows_.oe_to_ue, "precomputed flow vs image");
  require_same_size(ue, flows_.oe_to_ue, "precomputed flow vs image");
  return flows_;
}

}  // namespace expfuse
