#include "expfuse/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace expfuse::nn {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <class T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * p;
        const T* src = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[static_cast<std::size_t>(iy) * w + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* col, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * p;
        T* dst = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[static_cast<std::size_t>(iy) * w + ix] += row[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ValidationError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad) {
  const Shape xs = g.shape(x);
  const Shape ws = g.shape(w);
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  if (ws.c != xs.c || ws.h != ws.w)
    throw ValidationError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  if (b.valid() && g.shape(b) != Shape{1, ws.n, 1, 1})
    throw ValidationError("conv2d: bias shape " + g.shape(b).str());
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, stride, pad);
  const int wo = conv_out(xs.w, k, stride, pad);
  require(ho >= 1 && wo >= 1, "conv2d: input smaller than kernel");
  const int cout = ws.n;
  const int kk = xs.c * k * k;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> out(Shape{xs.n, cout, ho, wo});
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kk) * p);
  const Tensor<T>& xv = g.value(x);
  CMapR<T> wm(g.value(w).ptr(), cout, kk);
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = xv.plane(n, 0);
    if (!pointwise) im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
    CMapR<T> cm(pointwise ? xn : col.data(), kk, static_cast<Eigen::Index>(p));
    MapR<T> om(out.plane(n, 0), cout, static_cast<Eigen::Index>(p));
    om.noalias() = wm * cm;
    if (b.valid()) {
      const T* bv = g.value(b).ptr();
      for (int co = 0; co < cout; ++co) om.row(co).array() += bv[co];
    }
  }

  return g.push(std::move(out), {x, w, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& dout = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    CMapR<T> wm(g.value(w).ptr(), cout, kk);
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kk) * p);
    std::vector<T> dcol(static_cast<std::size_t>(kk) * p);
    for (int n = 0; n < xs.n; ++n) {
      CMapR<T> dom(dout.plane(n, 0), cout, static_cast<Eigen::Index>(p));
      const T* xn = xv.plane(n, 0);
      if (g.requires_grad(w)) {
        if (!pointwise) im2col(xn, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
        CMapR<T> cm(pointwise ? xn : col.data(), kk, static_cast<Eigen::Index>(p));
        MapR<T> dwm(g.grad_buffer(w).ptr(), cout, kk);
        dwm.noalias() += dom * cm.transpose();
      }
      if (b.valid() && g.requires_grad(b)) {
        T* db = g.grad_buffer(b).ptr();
        for (int co = 0; co < cout; ++co) db[co] += dom.row(co).sum();
      }
      if (g.requires_grad(x)) {
        T* dx = g.grad_buffer(x).plane(n, 0);
        if (pointwise) {
          MapR<T> dxm(dx, kk, static_cast<Eigen::Index>(p));
          dxm.noalias() += wm.transpose() * dom;
        } else {
          MapR<T> dcm(dcol.data(), kk, static_cast<Eigen::Index>(p));
          dcm.noalias() = wm.transpose() * dom;
          col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, dx);
        }
      }
    }
  });
}

template <class T>
Var depthwise_conv2d(Graph<T>& g, Var x, Var w, Var b, int pad) {
  const Shape xs = g.shape(x);
  const Shape ws = g.shape(w);
  if (ws.n != xs.c || ws.c != 1 || ws.h != ws.w)
    throw ValidationError("depthwise_conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  if (b.valid() && g.shape(b) != Shape{1, xs.c, 1, 1}) throw ValidationError("depthwise_conv2d: bad bias shape");
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, 1, pad);
  const int wo = conv_out(xs.w, k, 1, pad);
  require(ho >= 1 && wo >= 1, "depthwise_conv2d: input smaller than kernel");

  Tensor<T> out(Shape{xs.n, xs.c, ho, wo});
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = xv.plane(n, c);
      const T* kern = wv.ptr() + static_cast<std::size_t>(c) * k * k;
      T* dst = out.plane(n, c);
      const T bias = b.valid() ? g.value(b)[c] : T(0);
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T acc = bias;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy - pad + ky;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox - pad + kx;
              if (ix < 0 || ix >= xs.w) continue;
              acc += kern[ky * k + kx] * src[static_cast<std::size_t>(iy) * xs.w + ix];
            }
          }
          dst[static_cast<std::size_t>(oy) * wo + ox] = acc;
        }
    }

  return g.push(std::move(out), {x, w, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& dout = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& wv = g.value(w);
    const bool need_x = g.requires_grad(x);
    const bool need_w = g.requires_grad(w);
    const bool need_b = b.valid() && g.requires_grad(b);
    T* dx = need_x ? g.grad_buffer(x).ptr() : nullptr;
    T* dw = need_w ? g.grad_buffer(w).ptr() : nullptr;
    T* db = need_b ? g.grad_buffer(b).ptr() : nullptr;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* src = xv.plane(n, c);
        const T* kern = wv.ptr() + static_cast<std::size_t>(c) * k * k;
        const T* go = dout.plane(n, c);
        T* gx = need_x ? dx + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane() : nullptr;
        T* gw = need_w ? dw + static_cast<std::size_t>(c) * k * k : nullptr;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const T d = go[static_cast<std::size_t>(oy) * wo + ox];
            if (need_b) db[c] += d;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy - pad + ky;
              if (iy < 0 || iy >= xs.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox - pad + kx;
                if (ix < 0 || ix >= xs.w) continue;
                const std::size_t xi = static_cast<std::size_t>(iy) * xs.w + ix;
                if (need_w) gw[ky * k + kx] += d * src[xi];
                if (need_x) gx[xi] += d * kern[ky * k + kx];
              }
            }
          }
      }
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "add");
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.push(std::move(out), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      Tensor<T>& gv = g.grad_buffer(v);
      for (std::size_t i = 0; i < d.size(); ++i) gv[i] += d[i];
    }
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "sub");
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.push(std::move(out), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] -= d[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same(g.shape(a), g.shape(b), "mul");
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.push(std::move(out), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    if (g.requires_grad(a)) {
      const Tensor<T>& bv = g.value(b);
      Tensor<T>& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      const Tensor<T>& av = g.value(a);
      Tensor<T>& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * av[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a);
  for (T& v : out.data()) v *= factor;
  return g.push(std::move(out), {a}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    Tensor<T>& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * factor;
  });
}

template <class T>
Var add_channel(Graph<T>& g, Var x, Var v) {
  const Shape xs = g.shape(x);
  const Shape vs = g.shape(v);
  if (vs.c != xs.c || vs.h != 1 || vs.w != 1 || (vs.n != xs.n && vs.n != 1))
    throw ValidationError("add_channel: " + vs.str() + " does not broadcast onto " + xs.str());
  Tensor<T> out = g.value(x);
  const Tensor<T>& vv = g.value(v);
  const std::size_t hw = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T add = vv[static_cast<std::size_t>(vs.n == 1 ? 0 : n) * xs.c + c];
      T* p = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) p[i] += add;
    }
  return g.push(std::move(out), {x, v}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
    }
    if (g.requires_grad(v)) {
      Tensor<T>& gv = g.grad_buffer(v);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const T* p = d.plane(n, c);
          T acc = T(0);
          for (std::size_t i = 0; i < hw; ++i) acc += p[i];
          gv[static_cast<std::size_t>(vs.n == 1 ? 0 : n) * xs.c + c] += acc;
        }
    }
  });
}

template <class T>
Var silu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / (T(1) + std::exp(-xv[i]));
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      gx[i] += d[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

template <class T>
Var exp(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& y = g.value(Var{self});
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * y[i];
  });
}

template <class T>
Var square(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += T(2) * d[i] * xv[i];
  });
}

template <class T>
Var abs(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(xv[i]);
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += xv[i] > T(0) ? d[i] : (xv[i] < T(0) ? -d[i] : T(0));
  });
}

template <class T>
Var sum_all(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  double acc = 0.0;
  for (T v : xv.data()) acc += static_cast<double>(v);
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc));
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const T d = g.grad(Var{self})[0];
    Tensor<T>& gx = g.grad_buffer(x);
    for (T& v : gx.data()) v += d;
  });
}

template <class T>
Var mean_all(Graph<T>& g, Var x) {
  const std::size_t n = g.value(x).size();
  require(n > 0, "mean_all: empty tensor");
  return scale(g, sum_all(g, x), static_cast<T>(1.0 / static_cast<double>(n)));
}

namespace {

// Per-row statistics kept alive by the backward closure.
template <class T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> rstd;
};

}  // namespace

template <class T>
Var group_norm(Graph<T>& g, Var x, Var gamma, Var beta, int groups, T eps) {
  const Shape xs = g.shape(x);
  require(groups >= 1 && xs.c % groups == 0, "group_norm: channels not divisible by groups");
  require(g.shape(gamma) == Shape{1, xs.c, 1, 1} && g.shape(beta) == Shape{1, xs.c, 1, 1},
          "group_norm: affine parameter shape");
  const int cpg = xs.c / groups;
  const std::size_t hw = xs.plane();
  const double m = static_cast<double>(cpg) * static_cast<double>(hw);
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& gm = g.value(gamma);
  const Tensor<T>& bt = g.value(beta);
  auto stats = std::make_shared<NormStats<T>>();
  stats->mean.resize(static_cast<std::size_t>(xs.n) * groups);
  stats->rstd.resize(stats->mean.size());
  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int gi = 0; gi < groups; ++gi) {
      double s = 0.0;
      double ss = 0.0;
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mean = s / m;
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      const double rstd = 1.0 / std::sqrt(ss / m + static_cast<double>(eps));
      stats->mean[static_cast<std::size_t>(n) * groups + gi] = static_cast<T>(mean);
      stats->rstd[static_cast<std::size_t>(n) * groups + gi] = static_cast<T>(rstd);
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const T* p = xv.plane(n, c);
        T* o = out.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i)
          o[i] = static_cast<T>((p[i] - mean) * rstd) * gm[c] + bt[c];
      }
    }
  return g.push(std::move(out), {x, gamma, beta}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& gm = g.value(gamma);
    const bool need_x = g.requires_grad(x);
    T* dg = g.requires_grad(gamma) ? g.grad_buffer(gamma).ptr() : nullptr;
    T* db = g.requires_grad(beta) ? g.grad_buffer(beta).ptr() : nullptr;
    for (int n = 0; n < xs.n; ++n)
      for (int gi = 0; gi < groups; ++gi) {
        const T mean = stats->mean[static_cast<std::size_t>(n) * groups + gi];
        const T rstd = stats->rstd[static_cast<std::size_t>(n) * groups + gi];
        double sum1 = 0.0;
        double sum2 = 0.0;
        for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const T* p = xv.plane(n, c);
          const T* dp = d.plane(n, c);
          double dgc = 0.0;
          double dbc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (p[i] - mean) * rstd;
            const T dxhat = dp[i] * gm[c];
            sum1 += dxhat;
            sum2 += dxhat * xhat;
            dgc += dp[i] * xhat;
            dbc += dp[i];
          }
          if (dg) dg[c] += static_cast<T>(dgc);
          if (db) db[c] += static_cast<T>(dbc);
        }
        if (!need_x) continue;
        Tensor<T>& gx = g.grad_buffer(x);
        const T mean1 = static_cast<T>(sum1 / m);
        const T mean2 = static_cast<T>(sum2 / m);
        for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const T* p = xv.plane(n, c);
          const T* dp = d.plane(n, c);
          T* gp = gx.plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (p[i] - mean) * rstd;
            gp[i] += rstd * (dp[i] * gm[c] - mean1 - xhat * mean2);
          }
        }
      }
  });
}

template <class T>
Var layer_norm_channels(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const Shape xs = g.shape(x);
  require(g.shape(gamma) == Shape{1, xs.c, 1, 1} && g.shape(beta) == Shape{1, xs.c, 1, 1},
          "layer_norm_channels: affine parameter shape");
  const std::size_t hw = xs.plane();
  const std::size_t cstride = hw;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& gm = g.value(gamma);
  const Tensor<T>& bt = g.value(beta);
  auto stats = std::make_shared<NormStats<T>>();
  stats->mean.resize(static_cast<std::size_t>(xs.n) * hw);
  stats->rstd.resize(stats->mean.size());
  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n) {
    const T* base = xv.plane(n, 0);
    T* obase = out.plane(n, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int c = 0; c < xs.c; ++c) s += base[c * cstride + i];
      const double mean = s / xs.c;
      double ss = 0.0;
      for (int c = 0; c < xs.c; ++c) {
        const double dv = base[c * cstride + i] - mean;
        ss += dv * dv;
      }
      const double rstd = 1.0 / std::sqrt(ss / xs.c + static_cast<double>(eps));
      stats->mean[n * hw + i] = static_cast<T>(mean);
      stats->rstd[n * hw + i] = static_cast<T>(rstd);
      for (int c = 0; c < xs.c; ++c)
        obase[c * cstride + i] = static_cast<T>((base[c * cstride + i] - mean) * rstd) * gm[c] + bt[c];
    }
  }
  return g.push(std::move(out), {x, gamma, beta}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& gm = g.value(gamma);
    const bool need_x = g.requires_grad(x);
    T* dg = g.requires_grad(gamma) ? g.grad_buffer(gamma).ptr() : nullptr;
    T* db = g.requires_grad(beta) ? g.grad_buffer(beta).ptr() : nullptr;
    T* dx = need_x ? g.grad_buffer(x).ptr() : nullptr;
    for (int n = 0; n < xs.n; ++n) {
      const T* base = xv.plane(n, 0);
      const T* dbase = d.plane(n, 0);
      for (std::size_t i = 0; i < hw; ++i) {
        const T mean = stats->mean[n * hw + i];
        const T rstd = stats->rstd[n * hw + i];
        double sum1 = 0.0;
        double sum2 = 0.0;
        for (int c = 0; c < xs.c; ++c) {
          const T xhat = (base[c * cstride + i] - mean) * rstd;
          const T dy = dbase[c * cstride + i];
          const T dxhat = dy * gm[c];
          sum1 += dxhat;
          sum2 += dxhat * xhat;
          if (dg) dg[c] += dy * xhat;
          if (db) db[c] += dy;
        }
        if (!need_x) continue;
        const T mean1 = static_cast<T>(sum1 / xs.c);
        const T mean2 = static_cast<T>(sum2 / xs.c);
        T* gp = dx + static_cast<std::size_t>(n) * xs.c * hw;
        for (int c = 0; c < xs.c; ++c) {
          const T xhat = (base[c * cstride + i] - mean) * rstd;
          gp[c * cstride + i] += rstd * (dbase[c * cstride + i] * gm[c] - mean1 - xhat * mean2);
        }
      }
    }
  });
}

template <class T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const Shape as = g.shape(a);
  const Shape bs = g.shape(b);
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ValidationError("concat_channels: " + as.str() + " vs " + bs.str());
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Tensor<T> out(os);
  const std::size_t ablock = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t bblock = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(g.value(a).plane(n, 0), ablock, out.plane(n, 0));
    std::copy_n(g.value(b).plane(n, 0), bblock, out.plane(n, as.c));
  }
  return g.push(std::move(out), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    for (int n = 0; n < as.n; ++n) {
      if (g.requires_grad(a)) {
        T* ga = g.grad_buffer(a).plane(n, 0);
        const T* src = d.plane(n, 0);
        for (std::size_t i = 0; i < ablock; ++i) ga[i] += src[i];
      }
      if (g.requires_grad(b)) {
        T* gb = g.grad_buffer(b).plane(n, 0);
        const T* src = d.plane(n, as.c);
        for (std::size_t i = 0; i < bblock; ++i) gb[i] += src[i];
      }
    }
  });
}

template <class T>
Var slice_channels(Graph<T>& g, Var x, int start, int count) {
  const Shape xs = g.shape(x);
  require(start >= 0 && count >= 1 && start + count <= xs.c, "slice_channels: range out of bounds");
  Tensor<T> out(Shape{xs.n, count, xs.h, xs.w});
  const std::size_t block = static_cast<std::size_t>(count) * xs.plane();
  for (int n = 0; n < xs.n; ++n) std::copy_n(g.value(x).plane(n, start), block, out.plane(n, 0));
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    Tensor<T>& gx = g.grad_buffer(x);
    for (int n = 0; n < xs.n; ++n) {
      T* dst = gx.plane(n, start);
      const T* src = d.plane(n, 0);
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <class T>
Var upsample_nearest2x(Graph<T>& g, Var x) {
  const Shape xs = g.shape(x);
  const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor<T> out(os);
  const Tensor<T>& xv = g.value(x);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* src = xv.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx)
          dst[static_cast<std::size_t>(y) * os.w + xx] = src[static_cast<std::size_t>(y / 2) * xs.w + xx / 2];
    }
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    Tensor<T>& gx = g.grad_buffer(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* src = d.plane(n, c);
        T* dst = gx.plane(n, c);
        for (int y = 0; y < os.h; ++y)
          for (int xx = 0; xx < os.w; ++xx)
            dst[static_cast<std::size_t>(y / 2) * xs.w + xx / 2] += src[static_cast<std::size_t>(y) * os.w + xx];
      }
  });
}

template <class T>
Var l2_normalize_spatial(Graph<T>& g, Var x, T eps) {
  const Shape xs = g.shape(x);
  const std::size_t hw = xs.plane();
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xs);
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(xs.n) * xs.c);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* p = xv.plane(n, c);
      double ss = 0.0;
      for (std::size_t i = 0; i < hw; ++i) ss += static_cast<double>(p[i]) * p[i];
      const T r = std::max(static_cast<T>(std::sqrt(ss)), eps);
      (*norms)[static_cast<std::size_t>(n) * xs.c + c] = r;
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) o[i] = p[i] / r;
    }
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& y = g.value(Var{self});
    Tensor<T>& gx = g.grad_buffer(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T r = (*norms)[static_cast<std::size_t>(n) * xs.c + c];
        const T* dp = d.plane(n, c);
        const T* yp = y.plane(n, c);
        T* gp = gx.plane(n, c);
        if (r <= eps) {
          for (std::size_t i = 0; i < hw; ++i) gp[i] += dp[i] / r;
          continue;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < hw; ++i) dot += static_cast<double>(yp[i]) * dp[i];
        for (std::size_t i = 0; i < hw; ++i) gp[i] += (dp[i] - yp[i] * static_cast<T>(dot)) / r;
      }
  });
}

template <class T>
Var channel_gram(Graph<T>& g, Var q, Var k) {
  const Shape qs = g.shape(q);
  require_same(qs, g.shape(k), "channel_gram");
  const auto p = static_cast<Eigen::Index>(qs.plane());
  Tensor<T> out(Shape{qs.n, 1, qs.c, qs.c});
  for (int n = 0; n < qs.n; ++n) {
    CMapR<T> qm(g.value(q).plane(n, 0), qs.c, p);
    CMapR<T> km(g.value(k).plane(n, 0), qs.c, p);
    MapR<T> am(out.plane(n, 0), qs.c, qs.c);
    am.noalias() = qm * km.transpose();
  }
  return g.push(std::move(out), {q, k}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    for (int n = 0; n < qs.n; ++n) {
      CMapR<T> dm(d.plane(n, 0), qs.c, qs.c);
      if (g.requires_grad(q)) {
        CMapR<T> km(g.value(k).plane(n, 0), qs.c, p);
        MapR<T> gq(g.grad_buffer(q).plane(n, 0), qs.c, p);
        gq.noalias() += dm * km;
      }
      if (g.requires_grad(k)) {
        CMapR<T> qm(g.value(q).plane(n, 0), qs.c, p);
        MapR<T> gk(g.grad_buffer(k).plane(n, 0), qs.c, p);
        gk.noalias() += dm.transpose() * qm;
      }
    }
  });
}

template <class T>
Var div_by_scalar(Graph<T>& g, Var x, Var s) {
  require(g.value(s).size() == 1, "div_by_scalar: divisor must be a scalar");
  const T sv = g.value(s)[0];
  if (!(sv > T(0))) throw ValidationError("div_by_scalar: divisor must be positive");
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v /= sv;
  return g.push(std::move(out), {x, s}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const T sv = g.value(s)[0];
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_buffer(x);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] / sv;
    }
    if (g.requires_grad(s)) {
      const Tensor<T>& xv = g.value(x);
      double acc = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(d[i]) * xv[i];
      g.grad_buffer(s)[0] += static_cast<T>(-acc / (static_cast<double>(sv) * sv));
    }
  });
}

template <class T>
Var softmax_rows(Graph<T>& g, Var x) {
  const Shape xs = g.shape(x);
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xs);
  const std::size_t rows = static_cast<std::size_t>(xs.n) * xs.c * xs.h;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = xv.ptr() + r * xs.w;
    T* o = out.ptr() + r * xs.w;
    const T mx = *std::max_element(p, p + xs.w);
    T sum = T(0);
    for (int j = 0; j < xs.w; ++j) sum += (o[j] = std::exp(p[j] - mx));
    for (int j = 0; j < xs.w; ++j) o[j] /= sum;
  }
  return g.push(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    const Tensor<T>& y = g.value(Var{self});
    Tensor<T>& gx = g.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yp = y.ptr() + r * xs.w;
      const T* dp = d.ptr() + r * xs.w;
      T dot = T(0);
      for (int j = 0; j < xs.w; ++j) dot += yp[j] * dp[j];
      T* gp = gx.ptr() + r * xs.w;
      for (int j = 0; j < xs.w; ++j) gp[j] += yp[j] * (dp[j] - dot);
    }
  });
}

template <class T>
Var channel_mix(Graph<T>& g, Var attn, Var v) {
  const Shape as = g.shape(attn);
  const Shape vs = g.shape(v);
  if (as != Shape{vs.n, 1, vs.c, vs.c})
    throw ValidationError("channel_mix: attention " + as.str() + " vs values " + vs.str());
  const auto p = static_cast<Eigen::Index>(vs.plane());
  Tensor<T> out(vs);
  for (int n = 0; n < vs.n; ++n) {
    CMapR<T> am(g.value(attn).plane(n, 0), vs.c, vs.c);
    CMapR<T> vm(g.value(v).plane(n, 0), vs.c, p);
    MapR<T> om(out.plane(n, 0), vs.c, p);
    om.noalias() = am * vm;
  }
  return g.push(std::move(out), {attn, v}, [=](Graph<T>& g, int self) {
    const Tensor<T>& d = g.grad(Var{self});
    for (int n = 0; n < vs.n; ++n) {
      CMapR<T> dm(d.plane(n, 0), vs.c, p);
      if (g.requires_grad(attn)) {
        CMapR<T> vm(g.value(v).plane(n, 0), vs.c, p);
        MapR<T> ga(g.grad_buffer(attn).plane(n, 0), vs.c, vs.c);
        ga.noalias() += dm * vm.transpose();
      }
      if (g.requires_grad(v)) {
        CMapR<T> am(g.value(attn).plane(n, 0), vs.c, vs.c);
        MapR<T> gv(g.grad_buffer(v).plane(n, 0), vs.c, p);
        gv.noalias() += am.transpose() * dm;
      }
    }
  });
}

template <class T>
Var mse(Graph<T>& g, Var a, Var b) {
  return mean_all(g, square(g, sub(g, a, b)));
}

template <class T>
Var l1(Graph<T>& g, Var a, Var b) {
  return mean_all(g, abs(g, sub(g, a, b)));
}

#define EXPFUSE_INSTANTIATE_OPS(T)                                                     \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                          \
  template Var depthwise_conv2d<T>(Graph<T>&, Var, Var, Var, int);                     \
  template Var add<T>(Graph<T>&, Var, Var);                                            \
  template Var sub<T>(Graph<T>&, Var, Var);                                            \
  template Var mul<T>(Graph<T>&, Var, Var);                                            \
  template Var scale<T>(Graph<T>&, Var, T);                                            \
  template Var add_channel<T>(Graph<T>&, Var, Var);                                    \
  template Var silu<T>(Graph<T>&, Var);                                                \
  template Var exp<T>(Graph<T>&, Var);                                                 \
  template Var square<T>(Graph<T>&, Var);                                              \
  template Var abs<T>(Graph<T>&, Var);                                                 \
  template Var sum_all<T>(Graph<T>&, Var);                                             \
  template Var mean_all<T>(Graph<T>&, Var);                                            \
  template Var group_norm<T>(Graph<T>&, Var, Var, Var, int, T);                        \
  template Var layer_norm_channels<T>(Graph<T>&, Var, Var, Var, T);                    \
  template Var concat_channels<T>(Graph<T>&, Var, Var);                                \
  template Var slice_channels<T>(Graph<T>&, Var, int, int);                            \
  template Var upsample_nearest2x<T>(Graph<T>&, Var);                                  \
  template Var l2_normalize_spatial<T>(Graph<T>&, Var, T);                             \
  template Var channel_gram<T>(Graph<T>&, Var, Var);                                   \
  template Var div_by_scalar<T>(Graph<T>&, Var, Var);                                  \
  template Var softmax_rows<T>(Graph<T>&, Var);                                        \
  template Var channel_mix<T>(Graph<T>&, Var, Var);                                    \
  template Var mse<T>(Graph<T>&, Var, Var);                                            \
  template Var l1<T>(Graph<T>&, Var, Var);

EXPFUSE_INSTANTIATE_OPS(float)
EXPFUSE_INSTANTIATE_OPS(double)

}  // namespace expfuse::nn
