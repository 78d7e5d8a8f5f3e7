#include "expfuse/evalcli/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "expfuse/imgcore/color.hpp"
#include "expfuse/imgcore/error.hpp"

namespace expfuse::evalcli {

void MefSsimParams::validate() const {
  require(window >= 2, "mef_ssim: window must be >= 2");
  require(stride >= 1, "mef_ssim: stride must be >= 1");
  require(c2 >= 0.0 && std::isfinite(c2), "mef_ssim: c2 must be finite and >= 0");
  require(max_exponent > 0.0, "mef_ssim: max_exponent must be > 0");
}

double mef_ssim(const ImageRGB& fused, std::span<const ImageRGB> inputs, const MefSsimParams& params) {
  params.validate();
  require(!inputs.empty(), "mef_ssim: no input exposures");
  for (const ImageRGB& in : inputs)
    require(in.height() == fused.height() && in.width() == fused.width(), "mef_ssim: dimension mismatch");
  const int win = params.window;
  require(fused.height() >= win && fused.width() >= win, "mef_ssim: image smaller than the window");

  const Plane f = luminance(fused);
  std::vector<Plane> lum;
  for (const ImageRGB& in : inputs) lum.push_back(luminance(in));

  const std::size_t n = static_cast<std::size_t>(win) * win;
  const std::size_t k_count = lum.size();
  std::vector<double> dev(k_count * n), contrast(k_count), sum(n), desired(n), y(n);

  auto centred = [&](const Plane& p, int y0, int x0, double* out) {
    double mean = 0.0;
    for (int dy = 0; dy < win; ++dy)
      for (int dx = 0; dx < win; ++dx) mean += p(y0 + dy, x0 + dx);
    mean /= static_cast<double>(n);
    double sq = 0.0;
    for (int dy = 0; dy < win; ++dy)
      for (int dx = 0; dx < win; ++dx) {
        const double d = p(y0 + dy, x0 + dx) - mean;
        out[dy * win + dx] = d;
        sq += d * d;
      }
    return std::sqrt(sq);
  };

  double total = 0.0;
  std::size_t windows = 0;
  for (int y0 = 0; y0 + win <= f.height(); y0 += params.stride)
    for (int x0 = 0; x0 + win <= f.width(); x0 += params.stride) {
      double c_max = 0.0, c_sum = 0.0;
      std::fill(sum.begin(), sum.end(), 0.0);
      for (std::size_t k = 0; k < k_count; ++k) {
        contrast[k] = centred(lum[k], y0, x0, &dev[k * n]);
        c_max = std::max(c_max, contrast[k]);
        c_sum += contrast[k];
        for (std::size_t i = 0; i < n; ++i) sum[i] += dev[k * n + i];
      }

      std::fill(desired.begin(), desired.end(), 0.0);
      if (c_max > 0.0) {
        double sum_norm = 0.0;
        for (double v : sum) sum_norm += v * v;
        const double r = std::min(std::sqrt(sum_norm) / c_sum, 1.0);
        const double p = std::min(std::tan(std::numbers::pi * r / 2.0), params.max_exponent);
        double w_total = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
          if (contrast[k] == 0.0) continue;
          const double w = std::pow(contrast[k] / c_max, p);
          w_total += w;
          for (std::size_t i = 0; i < n; ++i) desired[i] += w * dev[k * n + i] / contrast[k];
        }
        double s_norm = 0.0;
        for (double& v : desired) {
          v /= w_total;
          s_norm += v * v;
        }
        s_norm = std::sqrt(s_norm);
        for (double& v : desired) v = s_norm > 0.0 ? c_max * v / s_norm : 0.0;
      }

      centred(f, y0, x0, y.data());
      double var_x = 0.0, var_y = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        var_x += desired[i] * desired[i];
        var_y += y[i] * y[i];
        cov += desired[i] * y[i];
      }
      const double inv = 1.0 / static_cast<double>(n);
      const double den = (var_x + var_y) * inv + params.c2;
      total += den > 0.0 ? (2.0 * cov * inv + params.c2) / den : 1.0;
      ++windows;
    }
  return total / static_cast<double>(windows);
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
  require(a.height() == b.height() && a.width() == b.width(), "psnr: dimension mismatch");
  require(!a.empty(), "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data().size());
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

double ssim(const ImageRGB& a, const ImageRGB& b) {
  require(a.height() == b.height() && a.width() == b.width(), "ssim: dimension mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  require(a.height() >= kWin && a.width() >= kWin, "ssim: image smaller than the 11x11 window");

  double kernel[kWin][kWin];
  double ksum = 0.0;
  for (int dy = 0; dy < kWin; ++dy)
    for (int dx = 0; dx < kWin; ++dx) {
      const double ry = dy - kWin / 2, rx = dx - kWin / 2;
      kernel[dy][dx] = std::exp(-(ry * ry + rx * rx) / (2.0 * kSigma * kSigma));
      ksum += kernel[dy][dx];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y0 = 0; y0 + kWin <= a.height(); ++y0)
      for (int x0 = 0; x0 + kWin <= a.width(); ++x0) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            const double w = kernel[dy][dx];
            const double va = a(y0 + dy, x0 + dx, c), vb = b(y0 + dy, x0 + dx, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace expfuse::evalcli
