#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fsaheat/autodiff.hpp"

namespace fsaheat {

enum class PadMode { reflect, zero };

// Mirrors without repeating the edge sample: -1 -> 1, D -> D-2.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

// Symmetric spatial padding of a [C,D,H,W] map.
inline Var pad3d(const Var& x, std::int64_t pd, std::int64_t ph, std::int64_t pw,
                 PadMode mode) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "pad3d: expected [C,D,H,W], got " + s.str());
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  if (mode == PadMode::reflect) {
    check(pd <= D - 1 && ph <= H - 1 && pw <= W - 1,
          "pad3d: reflect padding (" + std::to_string(pd) + "," + std::to_string(ph) + "," +
              std::to_string(pw) + ") too large for " + s.str());
  }
  const std::int64_t Dp = D + 2 * pd, Hp = H + 2 * ph, Wp = W + 2 * pw;
  // Per-axis source index, or -1 for zero padding.
  auto build_map = [mode](std::int64_t n, std::int64_t p) {
    std::vector<std::int64_t> m(static_cast<std::size_t>(n + 2 * p));
    for (std::int64_t i = 0; i < n + 2 * p; ++i) {
      const std::int64_t j = i - p;
      if (j >= 0 && j < n) m[static_cast<std::size_t>(i)] = j;
      else m[static_cast<std::size_t>(i)] = mode == PadMode::reflect ? reflect_index(j, n) : -1;
    }
    return m;
  };
  const auto md = build_map(D, pd), mh = build_map(H, ph), mw = build_map(W, pw);
  Tensor out(Shape{C, Dp, Hp, Wp});
  const double* px = x.value().ptr();
  double* po = out.ptr();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t d = 0; d < Dp; ++d) {
      const std::int64_t sd = md[static_cast<std::size_t>(d)];
      for (std::int64_t h = 0; h < Hp; ++h) {
        const std::int64_t sh = mh[static_cast<std::size_t>(h)];
        double* orow = po + ((c * Dp + d) * Hp + h) * Wp;
        if (sd < 0 || sh < 0) continue;  // zeros already
        const double* xrow = px + ((c * D + sd) * H + sh) * W;
        for (std::int64_t w = 0; w < Wp; ++w) {
          const std::int64_t sw = mw[static_cast<std::size_t>(w)];
          orow[w] = sw < 0 ? 0.0 : xrow[sw];
        }
      }
    }
  auto bw = [C, D, H, W, Dp, Hp, Wp, md, mh, mw](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* g = self.grad.ptr();
    double* gx = X.grad.ptr();
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t d = 0; d < Dp; ++d) {
        const std::int64_t sd = md[static_cast<std::size_t>(d)];
        if (sd < 0) continue;
        for (std::int64_t h = 0; h < Hp; ++h) {
          const std::int64_t sh = mh[static_cast<std::size_t>(h)];
          if (sh < 0) continue;
          const double* grow = g + ((c * Dp + d) * Hp + h) * Wp;
          double* xrow = gx + ((c * D + sd) * H + sh) * W;
          for (std::int64_t w = 0; w < Wp; ++w) {
            const std::int64_t sw = mw[static_cast<std::size_t>(w)];
            if (sw >= 0) xrow[sw] += grow[w];
          }
        }
      }
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

// Cross-correlation, no padding, depth stride fixed at 1.
// x: [C_in, D, H, W], w: [C_out, C_in/groups, kD, kH, kW], b: [C_out] or undefined.
inline Var conv3d_valid(const Var& x, const Var& w, const Var& b,
                        std::int64_t stride_lat, std::int64_t groups) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check(xs.rank() == 4, "conv3d: input must be [C,D,H,W], got " + xs.str());
  check(ws.rank() == 5, "conv3d: kernel must be [Co,Ci/g,kD,kH,kW], got " + ws.str());
  const std::int64_t Ci = xs[0], D = xs[1], H = xs[2], W = xs[3];
  const std::int64_t Co = ws[0], Cig = ws[1], kD = ws[2], kH = ws[3], kW = ws[4];
  check(groups >= 1 && Ci % groups == 0 && Co % groups == 0,
        "conv3d: channel counts not divisible by groups");
  check(Cig == Ci / groups, "conv3d: kernel group width " + std::to_string(Cig) +
                                " does not match input channels " + xs.str());
  check(kD <= D && kH <= H && kW <= W,
        "conv3d: kernel " + ws.str() + " larger than (padded) input " + xs.str());
  check(stride_lat >= 1, "conv3d: stride must be >= 1");
  const std::int64_t Do = D - kD + 1;
  const std::int64_t Ho = (H - kH) / stride_lat + 1;
  const std::int64_t Wo = (W - kW) / stride_lat + 1;
  const bool has_bias = b.defined();
  if (has_bias)
    check(b.shape() == Shape{Co}, "conv3d: bias shape " + b.shape().str() +
                                      " does not match output channels " + std::to_string(Co));

  Tensor out(Shape{Co, Do, Ho, Wo});
  const double* px = x.value().ptr();
  const double* pw = w.value().ptr();
  double* po = out.ptr();
  const std::int64_t s = stride_lat;
  const std::int64_t cpg_o = Co / groups;
  for (std::int64_t co = 0; co < Co; ++co) {
    const std::int64_t g = co / cpg_o;
    if (has_bias) {
      const double bv = b.value()[co];
      double* obase = po + co * Do * Ho * Wo;
      for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) obase[i] = bv;
    }
    for (std::int64_t ci = 0; ci < Cig; ++ci) {
      const std::int64_t cin = g * Cig + ci;
      for (std::int64_t kd = 0; kd < kD; ++kd)
        for (std::int64_t kh = 0; kh < kH; ++kh)
          for (std::int64_t kw = 0; kw < kW; ++kw) {
            const double wv = pw[(((co * Cig + ci) * kD + kd) * kH + kh) * kW + kw];
            if (wv == 0.0) continue;
            for (std::int64_t d = 0; d < Do; ++d)
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                const double* xrow = px + ((cin * D + d + kd) * H + oh * s + kh) * W + kw;
                double* orow = po + ((co * Do + d) * Ho + oh) * Wo;
                if (s == 1) {
                  for (std::int64_t ow = 0; ow < Wo; ++ow) orow[ow] += wv * xrow[ow];
                } else {
                  for (std::int64_t ow = 0; ow < Wo; ++ow) orow[ow] += wv * xrow[ow * s];
                }
              }
          }
    }
  }

  auto bw = [Ci, D, H, W, Co, Cig, kD, kH, kW, Do, Ho, Wo, s, cpg_o, has_bias](Node& self) {
    Node& X = *self.parents[0];
    Node& Wn = *self.parents[1];
    Node* Bn = has_bias ? self.parents[2].get() : nullptr;
    const double* g = self.grad.ptr();
    const double* px2 = X.value.ptr();
    const double* pw2 = Wn.value.ptr();
    if (Bn && Bn->requires_grad) {
      Bn->ensure_grad();
      for (std::int64_t co = 0; co < Co; ++co) {
        const double* obase = g + co * Do * Ho * Wo;
        double acc = 0.0;
        for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) acc += obase[i];
        Bn->grad[co] += acc;
      }
    }
    if (X.requires_grad) X.ensure_grad();
    if (Wn.requires_grad) Wn.ensure_grad();
    double* gx = X.requires_grad ? X.grad.ptr() : nullptr;
    double* gw = Wn.requires_grad ? Wn.grad.ptr() : nullptr;
    for (std::int64_t co = 0; co < Co; ++co) {
      const std::int64_t grp = co / cpg_o;
      for (std::int64_t ci = 0; ci < Cig; ++ci) {
        const std::int64_t cin = grp * Cig + ci;
        for (std::int64_t kd = 0; kd < kD; ++kd)
          for (std::int64_t kh = 0; kh < kH; ++kh)
            for (std::int64_t kw = 0; kw < kW; ++kw) {
              const std::int64_t widx = (((co * Cig + ci) * kD + kd) * kH + kh) * kW + kw;
              const double wv = pw2[widx];
              double wacc = 0.0;
              for (std::int64_t d = 0; d < Do; ++d)
                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                  const double* grow = g + ((co * Do + d) * Ho + oh) * Wo;
                  const std::int64_t xoff = ((cin * D + d + kd) * H + oh * s + kh) * W + kw;
                  const double* xrow = px2 + xoff;
                  if (gw) {
                    if (s == 1) {
                      for (std::int64_t ow = 0; ow < Wo; ++ow) wacc += grow[ow] * xrow[ow];
                    } else {
                      for (std::int64_t ow = 0; ow < Wo; ++ow) wacc += grow[ow] * xrow[ow * s];
                    }
                  }
                  if (gx && wv != 0.0) {
                    double* xg = gx + xoff;
                    if (s == 1) {
                      for (std::int64_t ow = 0; ow < Wo; ++ow) xg[ow] += wv * grow[ow];
                    } else {
                      for (std::int64_t ow = 0; ow < Wo; ++ow) xg[ow * s] += wv * grow[ow];
                    }
                  }
                }
              if (gw) gw[widx] += wacc;
            }
      }
    }
  };
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return make_op(std::move(out), std::move(parents), std::move(bw));
}

// Same-padding convolution; odd kernel dims required so output spatial dims
// equal input dims at stride 1. Lateral stride 2 halves even H,W.
inline Var conv3d(const Var& x, const Var& w, const Var& b, std::int64_t stride_lat,
                  PadMode pad, std::int64_t groups = 1) {
  const Shape& ws = w.shape();
  check(ws.rank() == 5, "conv3d: kernel must be [Co,Ci/g,kD,kH,kW], got " + ws.str());
  const std::int64_t kD = ws[2], kH = ws[3], kW = ws[4];
  check(kD % 2 == 1 && kH % 2 == 1 && kW % 2 == 1,
        "conv3d: kernel dims must be odd, got " + ws.str());
  const std::int64_t pd = (kD - 1) / 2, ph = (kH - 1) / 2, pw = (kW - 1) / 2;
  Var xin = (pd || ph || pw) ? pad3d(x, pd, ph, pw, pad) : x;
  return conv3d_valid(xin, w, b, stride_lat, groups);
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormKind { layer, instance };

// Normalizes over a single axis; gamma/beta indexed along that axis.
inline Var layer_norm_axis(const Var& x, int axis, const Var& gamma, const Var& beta,
                           double eps = 1e-5) {
  const Shape& s = x.shape();
  check(axis >= 0 && axis < s.rank(), "layer_norm: bad axis");
  const std::int64_t m = s[axis];
  check(m >= 2, "layer_norm: normalization axis has a single element (variance undefined)");
  check(gamma.shape() == Shape{m} && beta.shape() == Shape{m},
        "layer_norm: scale/shift must have shape [" + std::to_string(m) + "]");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.rank(); ++i) inner *= s[i];

  Tensor out(s);
  Tensor istd_t(Shape{outer, std::max<std::int64_t>(inner, 1)});
  Tensor xhat(s);
  const double* px = x.value().ptr();
  const double* pg = gamma.value().ptr();
  const double* pb = beta.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * m * inner + i;
      double mu = 0.0;
      for (std::int64_t j = 0; j < m; ++j) mu += px[base + j * inner];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::int64_t j = 0; j < m; ++j) {
        const double d = px[base + j * inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + eps);
      istd_t[o * inner + i] = istd;
      for (std::int64_t j = 0; j < m; ++j) {
        const double xh = (px[base + j * inner] - mu) * istd;
        xhat[base + j * inner] = xh;
        out[base + j * inner] = xh * pg[j] + pb[j];
      }
    }
  auto bw = [outer, inner, m, istd_t, xhat](Node& self) {
    Node& X = *self.parents[0];
    Node& G = *self.parents[1];
    Node& B = *self.parents[2];
    const double* g = self.grad.ptr();
    const double* xh = xhat.ptr();
    const double* pg2 = G.value.ptr();
    if (G.requires_grad) G.ensure_grad();
    if (B.requires_grad) B.ensure_grad();
    if (X.requires_grad) X.ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * m * inner + i;
        const double istd = istd_t[o * inner + i];
        if (G.requires_grad || B.requires_grad) {
          for (std::int64_t j = 0; j < m; ++j) {
            const double gj = g[base + j * inner];
            if (G.requires_grad) G.grad[j] += gj * xh[base + j * inner];
            if (B.requires_grad) B.grad[j] += gj;
          }
        }
        if (X.requires_grad) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::int64_t j = 0; j < m; ++j) {
            const double gj = g[base + j * inner] * pg2[j];
            mean_g += gj;
            mean_gx += gj * xh[base + j * inner];
          }
          mean_g /= static_cast<double>(m);
          mean_gx /= static_cast<double>(m);
          for (std::int64_t j = 0; j < m; ++j) {
            const double gj = g[base + j * inner] * pg2[j];
            X.grad[base + j * inner] += istd * (gj - mean_g - xh[base + j * inner] * mean_gx);
          }
        }
      }
  };
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()}, std::move(bw));
}

// Per channel over (D,H,W); gamma/beta have shape [C].
inline Var instance_norm(const Var& x, const Var& gamma, const Var& beta,
                         double eps = 1e-5) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "instance_norm: expected [C,D,H,W], got " + s.str());
  const std::int64_t C = s[0], m = s[1] * s[2] * s[3];
  check(m >= 2, "instance_norm: normalization axis has a single element (variance undefined)");
  check(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
        "instance_norm: scale/shift must have shape [" + std::to_string(C) + "]");
  Tensor out(s);
  Tensor istd_t(Shape{C});
  Tensor xhat(s);
  const double* px = x.value().ptr();
  for (std::int64_t c = 0; c < C; ++c) {
    const double* xc = px + c * m;
    double mu = 0.0;
    for (std::int64_t j = 0; j < m; ++j) mu += xc[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
      const double d = xc[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double istd = 1.0 / std::sqrt(var + eps);
    istd_t[c] = istd;
    const double gm = gamma.value()[c], bt = beta.value()[c];
    for (std::int64_t j = 0; j < m; ++j) {
      const double xh = (xc[j] - mu) * istd;
      xhat[c * m + j] = xh;
      out[c * m + j] = xh * gm + bt;
    }
  }
  auto bw = [C, m, istd_t, xhat](Node& self) {
    Node& X = *self.parents[0];
    Node& G = *self.parents[1];
    Node& B = *self.parents[2];
    const double* g = self.grad.ptr();
    const double* xh = xhat.ptr();
    if (G.requires_grad) G.ensure_grad();
    if (B.requires_grad) B.ensure_grad();
    if (X.requires_grad) X.ensure_grad();
    for (std::int64_t c = 0; c < C; ++c) {
      const double* gc = g + c * m;
      const double* xhc = xh + c * m;
      if (G.requires_grad || B.requires_grad) {
        double sg = 0.0, sgx = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
          sg += gc[j];
          sgx += gc[j] * xhc[j];
        }
        if (G.requires_grad) G.grad[c] += sgx;
        if (B.requires_grad) B.grad[c] += sg;
      }
      if (X.requires_grad) {
        const double gm = G.value[c];
        const double istd = istd_t[c];
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
          mean_g += gc[j];
          mean_gx += gc[j] * xhc[j];
        }
        mean_g = mean_g * gm / static_cast<double>(m);
        mean_gx = mean_gx * gm / static_cast<double>(m);
        double* xg = X.grad.ptr() + c * m;
        for (std::int64_t j = 0; j < m; ++j)
          xg[j] += istd * (gc[j] * gm - mean_g - xhc[j] * mean_gx);
      }
    }
  };
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()}, std::move(bw));
}

inline Var norm(const Var& x, NormKind kind, const Var& gamma, const Var& beta,
                double eps = 1e-5) {
  if (kind == NormKind::instance) return instance_norm(x, gamma, beta, eps);
  // Layer norm normalizes the feature axis: axis 0 of a [C,D,H,W] map,
  // the trailing axis of a token matrix.
  const int axis = x.shape().rank() == 4 ? 0 : x.shape().rank() - 1;
  return layer_norm_axis(x, axis, gamma, beta, eps);
}

// ---------------------------------------------------------------------------
// Lateral resampling (the depth axis is never resampled)

namespace detail {

struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> t;
};

// align-corners-false source coordinates with linear extrapolation at the
// borders, so affine ramps are exact fixed points of up-then-down chains.
inline LerpAxis lerp_axis(std::int64_t in, std::int64_t out) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(out));
  ax.i1.resize(static_cast<std::size_t>(out));
  ax.t.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (in == 1) {
      ax.i0[static_cast<std::size_t>(o)] = 0;
      ax.i1[static_cast<std::size_t>(o)] = 0;
      ax.t[static_cast<std::size_t>(o)] = 0.0;
      continue;
    }
    std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 < 0) i0 = 0;
    if (i0 > in - 2) i0 = in - 2;
    ax.i0[static_cast<std::size_t>(o)] = i0;
    ax.i1[static_cast<std::size_t>(o)] = i0 + 1;
    ax.t[static_cast<std::size_t>(o)] = src - static_cast<double>(i0);
  }
  return ax;
}

}  // namespace detail

inline Var upsample_lateral(const Var& x, std::int64_t H2, std::int64_t W2) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "upsample_lateral: expected [C,D,H,W], got " + s.str());
  check(H2 >= 1 && W2 >= 1, "upsample_lateral: target dims must be >= 1");
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  const auto ah = detail::lerp_axis(H, H2);
  const auto aw = detail::lerp_axis(W, W2);
  Tensor out(Shape{C, D, H2, W2});
  const double* px = x.value().ptr();
  double* po = out.ptr();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t d = 0; d < D; ++d) {
      const double* plane = px + (c * D + d) * H * W;
      double* oplane = po + (c * D + d) * H2 * W2;
      for (std::int64_t oh = 0; oh < H2; ++oh) {
        const std::int64_t h0 = ah.i0[static_cast<std::size_t>(oh)], h1 = ah.i1[static_cast<std::size_t>(oh)];
        const double th = ah.t[static_cast<std::size_t>(oh)];
        const double* r0 = plane + h0 * W;
        const double* r1 = plane + h1 * W;
        for (std::int64_t ow = 0; ow < W2; ++ow) {
          const std::int64_t w0 = aw.i0[static_cast<std::size_t>(ow)], w1 = aw.i1[static_cast<std::size_t>(ow)];
          const double tw = aw.t[static_cast<std::size_t>(ow)];
          const double top = r0[w0] * (1.0 - tw) + r0[w1] * tw;
          const double bot = r1[w0] * (1.0 - tw) + r1[w1] * tw;
          oplane[oh * W2 + ow] = top * (1.0 - th) + bot * th;
        }
      }
    }
  auto bw = [C, D, H, W, H2, W2, ah, aw](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* g = self.grad.ptr();
    double* gx = X.grad.ptr();
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t d = 0; d < D; ++d) {
        double* plane = gx + (c * D + d) * H * W;
        const double* gplane = g + (c * D + d) * H2 * W2;
        for (std::int64_t oh = 0; oh < H2; ++oh) {
          const std::int64_t h0 = ah.i0[static_cast<std::size_t>(oh)], h1 = ah.i1[static_cast<std::size_t>(oh)];
          const double th = ah.t[static_cast<std::size_t>(oh)];
          for (std::int64_t ow = 0; ow < W2; ++ow) {
            const std::int64_t w0 = aw.i0[static_cast<std::size_t>(ow)], w1 = aw.i1[static_cast<std::size_t>(ow)];
            const double tw = aw.t[static_cast<std::size_t>(ow)];
            const double gv = gplane[oh * W2 + ow];
            plane[h0 * W + w0] += gv * (1.0 - th) * (1.0 - tw);
            plane[h0 * W + w1] += gv * (1.0 - th) * tw;
            plane[h1 * W + w0] += gv * th * (1.0 - tw);
            plane[h1 * W + w1] += gv * th * tw;
          }
        }
      }
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

inline Var adaptive_avg_pool(const Var& x, std::int64_t H2, std::int64_t W2) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "adaptive_avg_pool: expected [C,D,H,W], got " + s.str());
  check(H2 >= 1 && W2 >= 1, "adaptive_avg_pool: target dims must be >= 1");
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  check(H % H2 == 0 && W % W2 == 0,
        "adaptive_avg_pool: target " + std::to_string(H2) + "x" + std::to_string(W2) +
            " must evenly partition " + s.str());
  const std::int64_t bh = H / H2, bw_ = W / W2;
  const double inv = 1.0 / static_cast<double>(bh * bw_);
  Tensor out(Shape{C, D, H2, W2});
  const double* px = x.value().ptr();
  double* po = out.ptr();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t d = 0; d < D; ++d) {
      const double* plane = px + (c * D + d) * H * W;
      double* oplane = po + (c * D + d) * H2 * W2;
      for (std::int64_t oh = 0; oh < H2; ++oh)
        for (std::int64_t ow = 0; ow < W2; ++ow) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < bh; ++i)
            for (std::int64_t j = 0; j < bw_; ++j)
              acc += plane[(oh * bh + i) * W + ow * bw_ + j];
          oplane[oh * W2 + ow] = acc * inv;
        }
    }
  auto bwfn = [C, D, H, W, H2, W2, bh, bw_, inv](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* g = self.grad.ptr();
    double* gx = X.grad.ptr();
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t d = 0; d < D; ++d) {
        double* plane = gx + (c * D + d) * H * W;
        const double* gplane = g + (c * D + d) * H2 * W2;
        for (std::int64_t oh = 0; oh < H2; ++oh)
          for (std::int64_t ow = 0; ow < W2; ++ow) {
            const double gv = gplane[oh * W2 + ow] * inv;
            for (std::int64_t i = 0; i < bh; ++i)
              for (std::int64_t j = 0; j < bw_; ++j)
                plane[(oh * bh + i) * W + ow * bw_ + j] += gv;
          }
      }
  };
  return make_op(std::move(out), {x.node()}, std::move(bwfn));
}

// Keeps every k-th lateral sample starting at 0.
inline Var strided_subsample(const Var& x, std::int64_t H2, std::int64_t W2) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "strided_subsample: expected [C,D,H,W], got " + s.str());
  check(H2 >= 1 && W2 >= 1, "strided_subsample: target dims must be >= 1");
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  check(H % H2 == 0 && W % W2 == 0,
        "strided_subsample: target must divide input dims " + s.str());
  const std::int64_t sh = H / H2, sw = W / W2;
  Tensor out(Shape{C, D, H2, W2});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t oh = 0; oh < H2; ++oh)
        for (std::int64_t ow = 0; ow < W2; ++ow)
          out.at4(c, d, oh, ow) = x.value().at4(c, d, oh * sh, ow * sw);
  auto bw = [C, D, H2, W2, sh, sw](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t oh = 0; oh < H2; ++oh)
          for (std::int64_t ow = 0; ow < W2; ++ow)
            X.grad.at4(c, d, oh * sh, ow * sw) += self.grad.at4(c, d, oh, ow);
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

enum class ResampleMode { trilinear_up, strided_down, adaptive_pool };

inline Var resample(const Var& x, std::int64_t H2, std::int64_t W2, ResampleMode mode) {
  switch (mode) {
    case ResampleMode::trilinear_up: return upsample_lateral(x, H2, W2);
    case ResampleMode::strided_down: return strided_subsample(x, H2, W2);
    case ResampleMode::adaptive_pool: return adaptive_avg_pool(x, H2, W2);
  }
  check(false, "resample: bad mode");
  return Var();
}

}  // namespace fsaheat
