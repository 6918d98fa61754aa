#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "fsaheat/autodiff.hpp"

namespace fsaheat {

// ---------------------------------------------------------------------------
// Basis caches

// Orthonormal DCT-II: B[u,x] = a_u cos(pi u (2x+1) / (2M)),
// a_0 = sqrt(1/M), a_u = sqrt(2/M) otherwise. B B^T = I.
inline const Tensor& dct_basis(std::int64_t M) {
  static std::map<std::int64_t, Tensor> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(M);
  if (it != cache.end()) return it->second;
  Tensor B(Shape{M, M});
  const double pi = std::acos(-1.0);
  for (std::int64_t u = 0; u < M; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / static_cast<double>(M))
                            : std::sqrt(2.0 / static_cast<double>(M));
    for (std::int64_t x = 0; x < M; ++x)
      B.at2(u, x) = a * std::cos(pi * static_cast<double>(u) *
                                 (2.0 * static_cast<double>(x) + 1.0) /
                                 (2.0 * static_cast<double>(M)));
  }
  return cache.emplace(M, std::move(B)).first->second;
}

// Real DFT bases: C[u,x] = cos(2 pi u x / M), S[u,x] = sin(2 pi u x / M).
inline const std::pair<Tensor, Tensor>& dft_basis(std::int64_t M) {
  static std::map<std::int64_t, std::pair<Tensor, Tensor>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(M);
  if (it != cache.end()) return it->second;
  Tensor C(Shape{M, M}), S(Shape{M, M});
  const double pi = std::acos(-1.0);
  for (std::int64_t u = 0; u < M; ++u)
    for (std::int64_t x = 0; x < M; ++x) {
      const double ang = 2.0 * pi * static_cast<double>(u) * static_cast<double>(x) /
                         static_cast<double>(M);
      C.at2(u, x) = std::cos(ang);
      S.at2(u, x) = std::sin(ang);
    }
  return cache.emplace(M, std::make_pair(std::move(C), std::move(S))).first->second;
}

// ---------------------------------------------------------------------------
// Raw separable transforms

namespace detail {

// y[o,u,i] = sum_j B[u,j] (or B[j,u] when transpose) * x[o,j,i]
inline Tensor axis_transform(const Tensor& x, const Tensor& B, int axis, bool transpose) {
  const Shape& s = x.shape;
  const std::int64_t m = s[axis];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  Tensor out(s);
  const double* px = x.ptr();
  const double* pb = B.ptr();
  double* po = out.ptr();
  if (inner == 1) {
    // Contiguous rows: plain dot products.
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* xrow = px + o * m;
      double* orow = po + o * m;
      for (std::int64_t u = 0; u < m; ++u) {
        double acc = 0.0;
        if (!transpose) {
          const double* brow = pb + u * m;
          for (std::int64_t j = 0; j < m; ++j) acc += brow[j] * xrow[j];
        } else {
          for (std::int64_t j = 0; j < m; ++j) acc += pb[j * m + u] * xrow[j];
        }
        orow[u] = acc;
      }
    }
  } else {
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t u = 0; u < m; ++u) {
        double* orow = po + (o * m + u) * inner;
        for (std::int64_t j = 0; j < m; ++j) {
          const double w = transpose ? pb[j * m + u] : pb[u * m + j];
          if (w == 0.0) continue;
          const double* xrow = px + (o * m + j) * inner;
          for (std::int64_t i = 0; i < inner; ++i) orow[i] += w * xrow[i];
        }
      }
  }
  return out;
}

}  // namespace detail

// Forward orthonormal DCT along one axis of any-rank tensor.
inline Tensor dct_axis_raw(const Tensor& x, int axis) {
  check(axis >= 0 && axis < x.shape.rank(), "dct_axis: bad axis");
  return detail::axis_transform(x, dct_basis(x.shape[axis]), axis, false);
}

inline Tensor idct_axis_raw(const Tensor& x, int axis) {
  check(axis >= 0 && axis < x.shape.rank(), "idct_axis: bad axis");
  return detail::axis_transform(x, dct_basis(x.shape[axis]), axis, true);
}

// 3D DCT over the trailing (D,H,W) axes of a [C,D,H,W] tensor.
inline Tensor dct3_raw(const Tensor& x) {
  check(x.shape.rank() == 4, "dct3: expected rank-4 tensor, got " + x.shape.str());
  Tensor y = dct_axis_raw(x, 3);
  y = dct_axis_raw(y, 2);
  return dct_axis_raw(y, 1);
}

inline Tensor idct3_raw(const Tensor& x) {
  check(x.shape.rank() == 4, "idct3: expected rank-4 tensor, got " + x.shape.str());
  Tensor y = idct_axis_raw(x, 1);
  y = idct_axis_raw(y, 2);
  return idct_axis_raw(y, 3);
}

// ---------------------------------------------------------------------------
// Differentiable wrappers. Orthonormality makes each transform's adjoint its
// inverse, so backward passes reuse the raw kernels.

inline Var dct3(const Var& x) {
  Tensor out = dct3_raw(x.value());
  auto bw = [](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    Tensor gx = idct3_raw(self.grad);
    const std::int64_t n = gx.numel();
    for (std::int64_t i = 0; i < n; ++i) X.grad[i] += gx[i];
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

inline Var idct3(const Var& x) {
  Tensor out = idct3_raw(x.value());
  auto bw = [](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    Tensor gx = dct3_raw(self.grad);
    const std::int64_t n = gx.numel();
    for (std::int64_t i = 0; i < n; ++i) X.grad[i] += gx[i];
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

inline Var dct_axis(const Var& x, int axis) {
  Tensor out = dct_axis_raw(x.value(), axis);
  auto bw = [axis](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    Tensor gx = idct_axis_raw(self.grad, axis);
    const std::int64_t n = gx.numel();
    for (std::int64_t i = 0; i < n; ++i) X.grad[i] += gx[i];
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

inline Var idct_axis(const Var& x, int axis) {
  Tensor out = idct_axis_raw(x.value(), axis);
  auto bw = [axis](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    Tensor gx = dct_axis_raw(self.grad, axis);
    const std::int64_t n = gx.numel();
    for (std::int64_t i = 0; i < n; ++i) X.grad[i] += gx[i];
  };
  return make_op(std::move(out), {x.node()}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Anisotropic frequency weighting

// Normalized squared frequencies: (idx / max(M-1, 1))^2, in [0,1].
inline std::vector<double> norm_freq_sq(std::int64_t M) {
  std::vector<double> v(static_cast<std::size_t>(M));
  const double den = static_cast<double>(std::max<std::int64_t>(M - 1, 1));
  for (std::int64_t i = 0; i < M; ++i) {
    const double f = static_cast<double>(i) / den;
    v[static_cast<std::size_t>(i)] = f * f;
  }
  return v;
}

// xf: DCT coefficients [C,D,H,W]; e: [C,3] rows (E_u, E_w, E_p) acting on the
// H, W, D frequency axes. Weight is exp(-(E_u u^2 + E_w w^2 + E_p p^2)) with
// each index normalized to [0,1], separable per axis.
inline Var apply_freq_weight(const Var& xf, const Var& e) {
  const Shape& s = xf.shape();
  check(s.rank() == 4, "apply_freq_weight: expected [C,D,H,W], got " + s.str());
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  check(e.shape() == Shape{C, 3},
        "apply_freq_weight: params must be [" + std::to_string(C) + ",3], got " + e.shape().str());
  const auto nu2 = norm_freq_sq(H), nw2 = norm_freq_sq(W), np2 = norm_freq_sq(D);
  auto axis_exp = [](double E, const std::vector<double>& f2) {
    std::vector<double> v(f2.size());
    for (std::size_t i = 0; i < f2.size(); ++i) v[i] = std::exp(-E * f2[i]);
    return v;
  };
  auto finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  Tensor out(s);
  const double* px = xf.value().ptr();
  double* po = out.ptr();
  for (std::int64_t c = 0; c < C; ++c) {
    const auto eu = axis_exp(e.value().at2(c, 0), nu2);
    const auto ew = axis_exp(e.value().at2(c, 1), nw2);
    const auto ep = axis_exp(e.value().at2(c, 2), np2);
    check(finite(eu) && finite(ew) && finite(ep),
          "apply_freq_weight: non-finite weight on channel " + std::to_string(c));
    for (std::int64_t p = 0; p < D; ++p)
      for (std::int64_t u = 0; u < H; ++u) {
        const double wpu = ep[static_cast<std::size_t>(p)] * eu[static_cast<std::size_t>(u)];
        const double* xrow = px + ((c * D + p) * H + u) * W;
        double* orow = po + ((c * D + p) * H + u) * W;
        for (std::int64_t w = 0; w < W; ++w)
          orow[w] = xrow[w] * wpu * ew[static_cast<std::size_t>(w)];
      }
  }
  auto bw = [C, D, H, W, nu2, nw2, np2, axis_exp](Node& self) {
    Node& X = *self.parents[0];
    Node& E = *self.parents[1];
    const double* g = self.grad.ptr();
    const double* px2 = X.value.ptr();
    if (X.requires_grad) X.ensure_grad();
    if (E.requires_grad) E.ensure_grad();
    for (std::int64_t c = 0; c < C; ++c) {
      const auto eu = axis_exp(E.value.at2(c, 0), nu2);
      const auto ew = axis_exp(E.value.at2(c, 1), nw2);
      const auto ep = axis_exp(E.value.at2(c, 2), np2);
      double dEu = 0.0, dEw = 0.0, dEp = 0.0;
      for (std::int64_t p = 0; p < D; ++p)
        for (std::int64_t u = 0; u < H; ++u) {
          const double wpu = ep[static_cast<std::size_t>(p)] * eu[static_cast<std::size_t>(u)];
          const std::int64_t base = ((c * D + p) * H + u) * W;
          for (std::int64_t w = 0; w < W; ++w) {
            const double wgt = wpu * ew[static_cast<std::size_t>(w)];
            const double gv = g[base + w];
            if (X.requires_grad) X.grad[base + w] += gv * wgt;
            if (E.requires_grad) {
              const double gxw = gv * px2[base + w] * wgt;
              dEu -= gxw * nu2[static_cast<std::size_t>(u)];
              dEw -= gxw * nw2[static_cast<std::size_t>(w)];
              dEp -= gxw * np2[static_cast<std::size_t>(p)];
            }
          }
        }
      if (E.requires_grad) {
        E.grad.at2(c, 0) += dEu;
        E.grad.at2(c, 1) += dEw;
        E.grad.at2(c, 2) += dEp;
      }
    }
  };
  return make_op(std::move(out), {xf.node(), e.node()}, std::move(bw));
}

// ---------------------------------------------------------------------------
// 2D DFT magnitude / phase per (c,d) plane

struct MagPhase {
  Var mag;
  Var phase;
};

// Unnormalized 2D DFT of each lateral plane:
//   Re = C_H X C_W^T - S_H X S_W^T,  Im = -(S_H X C_W^T + C_H X S_W^T)
// Returns |F| and atan2(Im, Re). Phase gradients are suppressed where the
// magnitude is below 1e-8; magnitude gradients where it is exactly zero.
inline MagPhase dft2_mag_phase(const Var& x) {
  const Shape& s = x.shape();
  check(s.rank() == 4, "dft2_mag_phase: expected [C,D,H,W], got " + s.str());
  const std::int64_t C = s[0], D = s[1], H = s[2], W = s[3];
  const auto& [CH, SH] = dft_basis(H);
  const auto& [CW, SW] = dft_basis(W);
  Tensor stacked(Shape{2, C, D, H, W});
  Tensor re_all(Shape{C, D, H, W}), im_all(Shape{C, D, H, W});
  const std::int64_t plane = H * W;
  std::vector<double> t1(static_cast<std::size_t>(plane)), t2(static_cast<std::size_t>(plane));
  for (std::int64_t cd = 0; cd < C * D; ++cd) {
    const double* xp = x.value().ptr() + cd * plane;
    double* re = re_all.ptr() + cd * plane;
    double* im = im_all.ptr() + cd * plane;
    // t1 = C_H X, t2 = S_H X
    std::fill(t1.begin(), t1.end(), 0.0);
    std::fill(t2.begin(), t2.end(), 0.0);
    matmul_acc_raw(CH.ptr(), xp, t1.data(), H, H, W, false, false);
    matmul_acc_raw(SH.ptr(), xp, t2.data(), H, H, W, false, false);
    // Re = t1 C_W^T - t2 S_W^T ; Im = -(t2 C_W^T + t1 S_W^T)
    matmul_acc_raw(t1.data(), CW.ptr(), re, H, W, W, false, true);
    std::vector<double> tmp(static_cast<std::size_t>(plane), 0.0);
    matmul_acc_raw(t2.data(), SW.ptr(), tmp.data(), H, W, W, false, true);
    for (std::int64_t i = 0; i < plane; ++i) re[i] -= tmp[i];
    std::fill(tmp.begin(), tmp.end(), 0.0);
    matmul_acc_raw(t2.data(), CW.ptr(), tmp.data(), H, W, W, false, true);
    for (std::int64_t i = 0; i < plane; ++i) im[i] = -tmp[i];
    std::fill(tmp.begin(), tmp.end(), 0.0);
    matmul_acc_raw(t1.data(), SW.ptr(), tmp.data(), H, W, W, false, true);
    for (std::int64_t i = 0; i < plane; ++i) im[i] -= tmp[i];
  }
  const std::int64_t n = C * D * plane;
  const double pi = std::acos(-1.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double r = std::hypot(re_all[i], im_all[i]);
    stacked[i] = r;
    double ph = std::atan2(im_all[i], re_all[i]);
    if (ph <= -pi) ph = pi;  // keep the range half-open: (-pi, pi]
    stacked[n + i] = ph;
  }
  auto bw = [C, D, H, W, n, re_all, im_all](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const auto& [CH2, SH2] = dft_basis(H);
    const auto& [CW2, SW2] = dft_basis(W);
    const double* gm = self.grad.ptr();
    const double* gp = self.grad.ptr() + n;
    // Polar -> rectangular adjoint.
    Tensor dre(Shape{C, D, H, W}), dim(Shape{C, D, H, W});
    for (std::int64_t i = 0; i < n; ++i) {
      const double re = re_all[i], im = im_all[i];
      const double r = std::hypot(re, im);
      double a = 0.0, b = 0.0;
      if (r > 0.0) {
        a = gm[i] * re / r;
        b = gm[i] * im / r;
      }
      if (r >= 1e-8) {
        const double r2 = r * r;
        a += gp[i] * (-im / r2);
        b += gp[i] * (re / r2);
      }
      dre[i] = a;
      dim[i] = b;
    }
    // dX = C_H^T dRe C_W - S_H^T dRe S_W - S_H^T dIm C_W - C_H^T dIm S_W
    const std::int64_t plane = H * W;
    std::vector<double> u1(static_cast<std::size_t>(plane));
    std::vector<double> u2(static_cast<std::size_t>(plane));
    for (std::int64_t cd = 0; cd < C * D; ++cd) {
      const double* gre = dre.ptr() + cd * plane;
      const double* gim = dim.ptr() + cd * plane;
      double* gx = X.grad.ptr() + cd * plane;
      // u1 = C_H^T gre - S_H^T gim ; u2 = -(S_H^T gre + C_H^T gim)
      std::fill(u1.begin(), u1.end(), 0.0);
      std::fill(u2.begin(), u2.end(), 0.0);
      matmul_acc_raw(CH2.ptr(), gre, u1.data(), H, H, W, true, false);
      matmul_acc_raw(SH2.ptr(), gre, u2.data(), H, H, W, true, false);
      std::vector<double> v1(static_cast<std::size_t>(plane), 0.0);
      std::vector<double> v2(static_cast<std::size_t>(plane), 0.0);
      matmul_acc_raw(SH2.ptr(), gim, v1.data(), H, H, W, true, false);
      matmul_acc_raw(CH2.ptr(), gim, v2.data(), H, H, W, true, false);
      // gx += u1 C_W - v1 C_W ... regroup: gx += (u1 - v1) C_W - (u2? ) ...
      // Expand directly: gx += u1 C_W (from C_H^T gre C_W)
      //                  gx -= u2' S_W with u2' = S_H^T gre  (second term)
      //                  gx -= v1 C_W (third term)
      //                  gx -= v2 S_W (fourth term)
      for (std::int64_t i = 0; i < plane; ++i) u1[i] -= v1[i];
      matmul_acc_raw(u1.data(), CW2.ptr(), gx, H, W, W, false, false);
      for (std::int64_t i = 0; i < plane; ++i) u2[i] = -(u2[i] + v2[i]);
      matmul_acc_raw(u2.data(), SW2.ptr(), gx, H, W, W, false, false);
    }
  };
  Var stacked_var = make_op(std::move(stacked), {x.node()}, std::move(bw));
  MagPhase out;
  out.mag = reshape(slice(stacked_var, 0, 0, 1), Shape{C, D, H, W});
  out.phase = reshape(slice(stacked_var, 0, 1, 1), Shape{C, D, H, W});
  return out;
}

}  // namespace fsaheat
