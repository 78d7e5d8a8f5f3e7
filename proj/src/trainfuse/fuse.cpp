#include <algorithm>

#include "expfuse/control/decompose.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/nn/image_tensor.hpp"
#include "expfuse/trainfuse/trainfuse.hpp"

namespace expfuse::trainfuse {

namespace {

int round_up(int v, int m) { return (v + m - 1) / m * m; }

// Edge-replicating pad to h x w.
template <class Img, class Copy>
Img pad_to(const Img& src, int h, int w, Copy copy) {
  Img out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) copy(out, y, x, src, std::min(y, src.height() - 1), std::min(x, src.width() - 1));
  return out;
}

ImageRGB pad_rgb(const ImageRGB& img, int h, int w) {
  return pad_to(img, h, w, [](ImageRGB& o, int y, int x, const ImageRGB& s, int sy, int sx) {
    for (int c = 0; c < 3; ++c) o(y, x, c) = s(sy, sx, c);
  });
}

Plane pad_plane(const Plane& p, int h, int w) {
  return pad_to(p, h, w, [](Plane& o, int y, int x, const Plane& s, int sy, int sx) { o(y, x) = s(sy, sx); });
}

BinaryMask pad_mask(const BinaryMask& m, int h, int w) {
  return pad_to(m, h, w, [](BinaryMask& o, int y, int x, const BinaryMask& s, int sy, int sx) { o(y, x) = s(sy, sx); });
}

ImageRGB crop_rgb(const ImageRGB& img, int h, int w) {
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(y, x, c) = img(y, x, c);
  return out;
}

}  // namespace

FusionResult fuse(const Bundle& b, const FusionRequest& req) {
  require(!req.oe.empty(), "fuse: empty input");
  require_same_size(req.ue, req.oe, "fuse ue/oe");
  require(req.oe.height() % 4 == 0 && req.oe.width() % 4 == 0, "fuse: image dimensions must be divisible by 4");
  require(req.steps >= 1, "fuse: sampler steps must be >= 1");
  b.backbone.require_ready();
  b.require_complete(Component::kDfcb, "fuse");
  b.require_complete(Component::kFcb, "fuse");
  if (!b.dfcb || !b.fcb) throw StateError("fuse: checkpoint lacks control branch weights");

  FusionResult out;
  out.stage1 = req.estimator ? prealign(req.ue, req.oe, req.consistency, *req.estimator)
                             : prealign(req.ue, req.oe, req.consistency);
  control::GuidancePack pack = control::decompose(out.stage1.guidance, out.stage1.mask);
  out.structure = pack.s;

  const int h = req.oe.height(), w = req.oe.width();
  const int div = b.backbone.vae.config().factor() * b.backbone.unet.config().divisor();
  const int ph = round_up(h, div), pw = round_up(w, div);
  pack.s = pad_plane(pack.s, ph, pw);
  pack.u = pad_plane(pack.u, ph, pw);
  pack.v = pad_plane(pack.v, ph, pw);
  pack.mask = pad_mask(pack.mask, ph, pw);
  const control::GuidanceTensors gt = control::guidance_tensors(std::span(&pack, 1));

  const nn::Tensor<float> oe = nn::image_to_tensor(pad_rgb(req.oe, ph, pw));
  const nn::Tensor<float> y_oe = b.backbone.vae.encode(oe);
  const control::DFCB<float>& dfcb = *b.dfcb;
  const nn::Tensor<float> z0 = b.backbone.sample(
      y_oe.shape(), genprior::SamplerOptions{.steps = req.steps, .seed = req.seed},
      [&](const nn::Tensor<float>& zt, int t) { return dfcb.residuals(zt, y_oe, gt.structure, gt.chroma, {t}); });
  const std::vector<nn::Tensor<float>> sc = b.fcb->shortcuts(oe, gt.structure, gt.chroma);
  out.image = crop_rgb(genprior::vae_decode(b.backbone.vae, z0, &sc), h, w);
  return out;
}

}  // namespace expfuse::trainfuse
