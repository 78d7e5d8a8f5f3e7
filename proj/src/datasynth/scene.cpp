#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "expfuse/datasynth/datasynth.hpp"
#include "expfuse/imgcore/error.hpp"

namespace expfuse::datasynth {

namespace {

std::uint64_t mix(std::uint64_t h) {
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBull;
  h ^= h >> 31;
  return h;
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ull ^
                                         static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53);
}

// Smooth value noise in [0,1], `cell` px per lattice step, 3 octaves.
double value_noise(double x, double y, double cell, std::uint64_t seed) {
  double v = 0.0, norm = 0.0, amp = 1.0;
  for (int o = 0; o < 3; ++o) {
    const double gx = x / cell, gy = y / cell;
    const double fx = std::floor(gx), fy = std::floor(gy);
    double tx = gx - fx, ty = gy - fy;
    tx = tx * tx * (3 - 2 * tx);
    ty = ty * ty * (3 - 2 * ty);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const std::uint64_t s = seed + 0x51ED27ull * o;
    const double top = (1 - tx) * lattice(ix, iy, s) + tx * lattice(ix + 1, iy, s);
    const double bot = (1 - tx) * lattice(ix, iy + 1, s) + tx * lattice(ix + 1, iy + 1, s);
    v += amp * ((1 - ty) * top + ty * bot);
    norm += amp;
    amp *= 0.55;
    cell *= 0.5;
  }
  return v / norm;
}

struct Sampler {
  std::mt19937_64 rng;

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  // Unit-max tint.
  std::array<double, 3> tint(double lo) {
    std::array<double, 3> t{uniform(lo, 1.0), uniform(lo, 1.0), uniform(lo, 1.0)};
    const double m = std::max({t[0], t[1], t[2]});
    for (double& v : t) v /= m;
    return t;
  }
};

}  // namespace

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

RadianceMap::RadianceMap(int height, int width, float fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {
  require(height >= 0 && width >= 0, "RadianceMap: negative size");
}

RadianceMap procedural_scene(std::uint64_t seed, const SceneParams& p) {
  require(p.height >= 8 && p.width >= 8, "procedural_scene: scene must be at least 8x8");
  require(p.background_min > 0 && p.background_min < p.background_max, "procedural_scene: bad surface range");
  require(p.light_min > 0 && p.light_min < p.light_max, "procedural_scene: bad light range");
  Sampler s{derive_rng(seed, 0, 0x5CE)};
  const int h = p.height, w = p.width;
  const double lo = p.background_min, hi = p.background_max;
  RadianceMap L(h, w);

  // Background: geometric blend of two colours along a random direction,
  // modulated by a low-frequency texture.
  {
    const double a0 = s.log_uniform(lo * 2, hi * 0.6), a1 = s.log_uniform(lo * 2, hi * 0.6);
    const auto t0 = s.tint(0.5), t1 = s.tint(0.5);
    const double theta = s.uniform(0, 2 * std::numbers::pi);
    const double cx = std::cos(theta), cy = std::sin(theta);
    const double ext = std::abs(cx) * w + std::abs(cy) * h;
    const std::uint64_t ts = s.rng();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double t = ((x - w / 2.0) * cx + (y - h / 2.0) * cy) / ext + 0.5;
        const double tex = 0.75 + 0.5 * value_noise(x, y, 24.0, ts);
        for (int c = 0; c < 3; ++c) {
          const double v = std::pow(a0 * t0[c], 1 - t) * std::pow(a1 * t1[c], t) * tex;
          L(y, x, c) = static_cast<float>(std::clamp(v, lo, hi));
        }
      }
  }

  const int span = std::min(h, w);
  const int n_disks = s.integer(2, 5);
  for (int i = 0; i < n_disks; ++i) {
    const double r = s.uniform(span * 0.05, span * 0.22);
    const double cx = s.uniform(0, w), cy = s.uniform(0, h);
    const double level = s.log_uniform(lo, hi);
    const auto t = s.tint(0.3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r)
          for (int c = 0; c < 3; ++c) L(y, x, c) = static_cast<float>(std::max(lo, level * t[c]));
  }

  const int n_rects = s.integer(1, 3);
  for (int i = 0; i < n_rects; ++i) {
    const int rw = s.integer(span / 6, span / 2), rh = s.integer(span / 6, span / 2);
    const int x0 = s.integer(-rw / 2, w - rw / 2), y0 = s.integer(-rh / 2, h - rh / 2);
    const double level = s.log_uniform(lo * 2, hi * 0.7);
    const auto t = s.tint(0.4);
    const double cell = s.uniform(3.0, 10.0);
    const std::uint64_t ts = s.rng();
    for (int y = std::max(0, y0); y < std::min(h, y0 + rh); ++y)
      for (int x = std::max(0, x0); x < std::min(w, x0 + rw); ++x) {
        const double tex = 0.3 + 1.4 * value_noise(x - x0, y - y0, cell, ts);
        for (int c = 0; c < 3; ++c) L(y, x, c) = static_cast<float>(std::clamp(level * t[c] * tex, lo, hi));
      }
  }

  // Light sources: bright cores with a soft additive halo.
  const int n_lights = s.integer(1, 2);
  for (int i = 0; i < n_lights; ++i) {
    const double r = s.uniform(span * 0.08, span * 0.2);
    const double cx = s.uniform(r, w - r), cy = s.uniform(r, h - r);
    const bool square = s.integer(0, 1) == 1;
    const double level = s.log_uniform(p.light_min, p.light_max);
    const auto t = s.tint(0.8);
    const std::uint64_t ts = s.rng();
    const double halo = s.uniform(0.05, 0.3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double d = square ? std::max(std::abs(dx), std::abs(dy)) : std::hypot(dx, dy);
        if (d <= r) {
          const double tex = 0.7 + 0.6 * value_noise(x, y, 6.0, ts);
          for (int c = 0; c < 3; ++c)
            L(y, x, c) = static_cast<float>(std::clamp(level * t[c] * tex, double(p.light_min), double(p.light_max)));
        } else {
          const double fall = halo * level * std::exp(-(d - r) * (d - r) / (0.5 * r * r));
          for (int c = 0; c < 3; ++c) L(y, x, c) += static_cast<float>(fall * t[c]);
        }
      }
  }
  return L;
}

ImageRGB render_exposure(const RadianceMap& radiance, double ev) {
  const double gain = std::exp2(ev);
  ImageRGB out(radiance.height(), radiance.width());
  auto src = radiance.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>(std::min(1.0, std::pow(static_cast<double>(src[i]) * gain, 1.0 / kGamma)));
  return out;
}

ImageRGB render_tonemapped(const RadianceMap& radiance, double ev) {
  const double gain = std::exp2(ev);
  ImageRGB out(radiance.height(), radiance.width());
  auto src = radiance.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double l = static_cast<double>(src[i]) * gain;
    dst[i] = static_cast<float>(std::pow(l / (1.0 + l), 1.0 / kGamma));
  }
  return out;
}

void ExposureTriplet::validate() const {
  require(!oe.empty(), "ExposureTriplet: empty images");
  require_same_size(ue, oe, "ExposureTriplet ue/oe");
  require_same_size(gt, oe, "ExposureTriplet gt/oe");
  require(ev_gap >= 1.0 && ev_gap <= 9.0, "ExposureTriplet: ev_gap must lie in [1, 9]");
  expfuse::validate(ue, "ue");
  expfuse::validate(oe, "oe");
  expfuse::validate(gt, "gt");
}

ExposureTriplet procedural_triplet(std::uint64_t seed, double ev_gap, const SceneParams& params) {
  require(ev_gap >= 1.0 && ev_gap <= 9.0, "procedural_triplet: ev_gap must lie in [1, 9]");
  const RadianceMap L = procedural_scene(seed, params);
  return ExposureTriplet{render_exposure(L, -ev_gap), render_exposure(L, 0.0), render_tonemapped(L, 0.0), ev_gap};
}

void VideoClip::validate() const {
  require(frames.size() >= 2, "VideoClip: need at least two frames");
  require(!frames.front().empty(), "VideoClip: empty frames");
  for (const ImageRGB& f : frames) require_same_size(f, frames.front(), "VideoClip frames");
}

namespace {

struct MovingRect {
  double x0, y0;  // first-frame top-left
  int w, h;
  int dx, dy;  // displacement first -> last
  std::uint64_t tex;
  std::array<double, 3> tint;
};

// Renders the background and rectangles (later ones on top) at clip phase
// `a` in [0,1]; returns the surface id per pixel (-1 = background).
std::vector<int> render_frame(ImageRGB& img, const std::vector<MovingRect>& rects, std::uint64_t bg, double a) {
  const int h = img.height(), w = img.width();
  std::vector<int> id(static_cast<std::size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img(y, x, c) = static_cast<float>(0.1 + 0.8 * value_noise(x, y, 8.0, bg + c));
      for (std::size_t k = 0; k < rects.size(); ++k) {
        const MovingRect& r = rects[k];
        const double px = x - (r.x0 + a * r.dx), py = y - (r.y0 + a * r.dy);
        if (px < 0 || py < 0 || px >= r.w || py >= r.h) continue;
        id[static_cast<std::size_t>(y) * w + x] = static_cast<int>(k);
        for (int c = 0; c < 3; ++c)
          img(y, x, c) = static_cast<float>(0.1 + 0.8 * r.tint[c] * value_noise(px, py, 5.0, r.tex + c));
      }
    }
  return id;
}

ProceduralClip make_clip(int h, int w, int frames, const std::vector<MovingRect>& rects, std::uint64_t bg) {
  require(frames >= 2, "procedural clip: need at least two frames");
  ProceduralClip out;
  std::vector<int> first, last;
  for (int k = 0; k < frames; ++k) {
    ImageRGB f(h, w);
    auto id = render_frame(f, rects, bg, static_cast<double>(k) / (frames - 1));
    if (k == 0) first = std::move(id);
    if (k == frames - 1) last = std::move(id);
    out.clip.frames.push_back(std::move(f));
  }
  out.first_to_last = FlowField(h, w);
  out.last_to_first = FlowField(h, w);
  out.occluded = BinaryMask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      int dx = 0, dy = 0;
      if (first[i] >= 0) dx = rects[first[i]].dx, dy = rects[first[i]].dy;
      out.first_to_last.dx(y, x) = static_cast<float>(dx);
      out.first_to_last.dy(y, x) = static_cast<float>(dy);
      if (last[i] >= 0) {
        out.last_to_first.dx(y, x) = static_cast<float>(-rects[last[i]].dx);
        out.last_to_first.dy(y, x) = static_cast<float>(-rects[last[i]].dy);
      }
      const int tx = x + dx, ty = y + dy;
      const bool in_view = tx >= 0 && ty >= 0 && tx < w && ty < h;
      out.occluded(y, x) = in_view && last[static_cast<std::size_t>(ty) * w + tx] != first[i] ? 1 : 0;
    }
  return out;
}

}  // namespace

ProceduralClip procedural_clip(std::uint64_t seed, const ClipParams& p) {
  require(p.height >= 8 && p.width >= 8, "procedural_clip: clip must be at least 8x8");
  require(p.min_frames >= 2 && p.min_frames <= p.max_frames, "procedural_clip: bad frame range");
  require(p.min_objects >= 1 && p.min_objects <= p.max_objects, "procedural_clip: bad object range");
  require(p.max_speed >= 0, "procedural_clip: negative speed");
  Sampler s{derive_rng(seed, 0, 0xC11)};
  const int frames = s.integer(p.min_frames, p.max_frames);
  const int span = std::min(p.height, p.width);
  std::vector<MovingRect> rects(static_cast<std::size_t>(s.integer(p.min_objects, p.max_objects)));
  for (MovingRect& r : rects) {
    r.w = s.integer(span / 8, span / 3);
    r.h = s.integer(span / 8, span / 3);
    r.x0 = s.integer(0, p.width - r.w);
    r.y0 = s.integer(0, p.height - r.h);
    const double speed = s.uniform(0.0, p.max_speed) * (frames - 1);
    const double dir = s.uniform(0, 2 * std::numbers::pi);
    r.dx = static_cast<int>(std::lround(speed * std::cos(dir)));
    r.dy = static_cast<int>(std::lround(speed * std::sin(dir)));
    r.tex = s.rng();
    r.tint = s.tint(0.3);
  }
  const std::uint64_t bg = s.rng();
  return make_clip(p.height, p.width, frames, rects, bg);
}

ProceduralClip translating_square_clip(int size, int square, int shift, int frames, std::uint64_t seed) {
  require(size >= 8 && square >= 1 && square + shift <= size, "translating_square_clip: square does not fit");
  MovingRect r{static_cast<double>((size - square - shift) / 2), static_cast<double>((size - square) / 2),
               square, square, shift, 0, seed * 7 + 1, {1.0, 0.8, 0.6}};
  return make_clip(size, size, frames, {r}, seed);
}

BinaryMask pseudo_occlusion_from_clip(const VideoClip& clip, const ConsistencyParams& params,
                                      const FlowEstimator& estimator) {
  clip.validate();
  params.validate();
  const BidirectionalFlow f = estimator.estimate_bidirectional(clip.frames.front(), clip.frames.back());
  return occlusion_mask(f.oe_to_ue, f.ue_to_oe, params);
}

BinaryMask pseudo_occlusion_from_clip(const VideoClip& clip, const ConsistencyParams& params) {
  return pseudo_occlusion_from_clip(clip, params, PyramidFlowEstimator{});
}

}  // namespace expfuse::datasynth
