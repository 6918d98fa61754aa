#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fsaheat/autodiff.hpp"
#include "fsaheat/spectral.hpp"
#include "fsaheat/thermal.hpp"

namespace fsaheat {

struct LossBreakdown {
  Var total;               // differentiable: spatial + alpha * frequency
  double spatial = 0.0;    // MSE over all cells
  double frequency = 0.0;  // magnitude term + beta * phase term, layer-averaged
  double alpha = 0.0, beta = 0.0;
};

inline constexpr double kPhaseSkipMag = 1e-8;

namespace detail {

inline double wrap_phase(double d) {
  const double pi = std::acos(-1.0);
  double w = std::remainder(d, 2.0 * pi);
  if (w <= -pi) w = pi;
  return w;
}

// sum_i w[i] * |wrap(phase[i] - truth[i])| as a scalar node; w carries the
// skip mask and per-layer averaging weights.
inline Var weighted_wrapped_l1(const Var& phase, Tensor truth, Tensor w) {
  check(phase.shape() == truth.shape && phase.shape() == w.shape,
        "weighted_wrapped_l1: shape mismatch");
  const Tensor& p = phase.value();
  const std::int64_t n = p.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += w[i] * std::abs(wrap_phase(p[i] - truth[i]));
  Tensor out(Shape{1});
  out[0] = acc;
  NodePtr pn = phase.node();
  return make_op(std::move(out), {pn},
                 [pn, truth = std::move(truth), w = std::move(w)](Node& self) {
                   if (!pn->requires_grad) return;
                   pn->ensure_grad();
                   const double go = self.grad[0];
                   const std::int64_t n = pn->value.numel();
                   for (std::int64_t i = 0; i < n; ++i) {
                     const double d = wrap_phase(pn->value[i] - truth[i]);
                     const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                     pn->grad[i] += go * w[i] * s;
                   }
                 });
}

}  // namespace detail

// Hybrid loss: spatial MSE plus frequency-domain magnitude and wrapped-phase
// L1 terms from the per-layer 2D DFT.
inline LossBreakdown fsl(const Var& pred, const Tensor& truth, double alpha = 0.5,
                         double beta = 1.0) {
  check(pred.defined(), "fsl: undefined prediction");
  check(pred.shape() == truth.shape, "fsl: prediction shape " + pred.shape().str() +
                                         " does not match target " + truth.shape.str());
  check(pred.shape().rank() == 3 && pred.shape()[0] == kLayers,
        "fsl: expected [4,R,C] fields, got " + pred.shape().str());
  check(alpha >= 0.0 && beta >= 0.0, "fsl: alpha and beta must be >= 0");
  check(pred.value().all_finite() && truth.all_finite(), "fsl: non-finite input field");

  const std::int64_t R = pred.shape()[1], C = pred.shape()[2];
  LossBreakdown out;
  out.alpha = alpha;
  out.beta = beta;

  Var diff = sub(pred, constant(truth));
  Var spatial = mean(mul(diff, diff));
  out.spatial = spatial.value()[0];
  if (alpha == 0.0) {
    out.total = spatial;
    return out;
  }

  Var planes = reshape(pred, Shape{kLayers, 1, R, C});
  MagPhase p = dft2_mag_phase(planes);
  MagPhase t = dft2_mag_phase(constant(Tensor(Shape{kLayers, 1, R, C}, truth.data)));

  Var mag_term = mean(abs(sub(p.mag, t.mag)));

  // Per-layer mean over unskipped bins, then averaged over layers; a layer
  // whose spectrum is entirely below the cutoff contributes zero.
  const Tensor& tmag = t.mag.value();
  Tensor w(tmag.shape);
  const std::int64_t plane = R * C;
  for (int l = 0; l < kLayers; ++l) {
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < plane; ++i)
      if (tmag[l * plane + i] >= kPhaseSkipMag) ++count;
    if (count == 0) continue;
    const double wl = 1.0 / (static_cast<double>(kLayers) * static_cast<double>(count));
    for (std::int64_t i = 0; i < plane; ++i)
      if (tmag[l * plane + i] >= kPhaseSkipMag) w[l * plane + i] = wl;
  }
  Var phase_term = detail::weighted_wrapped_l1(p.phase, t.phase.value(), std::move(w));

  Var freq = add(mag_term, scale(phase_term, beta));
  out.frequency = freq.value()[0];
  out.total = add(spatial, scale(freq, alpha));
  return out;
}

struct Metrics {
  double rmse = 0.0, mae = 0.0, mape = 0.0, psnr = 0.0;
};

inline Metrics metrics(const Tensor& pred, const Tensor& truth, double peak) {
  check(pred.shape == truth.shape, "metrics: shape mismatch");
  check(pred.numel() > 0, "metrics: empty evaluation set");
  check(peak > 0.0, "metrics: peak must be > 0");
  const std::int64_t n = pred.numel();
  double sq = 0.0, ab = 0.0, pe = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pred[i] - truth[i];
    sq += d * d;
    ab += std::abs(d);
    pe += std::abs(d) / (std::abs(truth[i]) + 1e-8);
  }
  Metrics m;
  m.rmse = std::sqrt(sq / static_cast<double>(n));
  m.mae = ab / static_cast<double>(n);
  m.mape = 100.0 * pe / static_cast<double>(n);
  m.psnr = m.rmse == 0.0 ? 200.0 : 20.0 * std::log10(peak / m.rmse);
  return m;
}

struct GradientField {
  Tensor gx, gy;  // [4,R,C], K per cell

  Tensor magnitude() const {
    Tensor m(gx.shape);
    for (std::int64_t i = 0; i < m.numel(); ++i) m[i] = std::hypot(gx[i], gy[i]);
    return m;
  }

  // Arrow lengths scaled to a per-layer max of 1 for export; raw gx/gy are the
  // scored quantities.
  Tensor normalized_magnitude() const {
    Tensor m = magnitude();
    const std::int64_t plane = m.numel() / kLayers;
    for (int l = 0; l < kLayers; ++l) {
      double mx = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) mx = std::max(mx, m[l * plane + i]);
      if (mx > 0.0)
        for (std::int64_t i = 0; i < plane; ++i) m[l * plane + i] /= mx;
    }
    return m;
  }
};

// x runs along columns, y along rows; central differences inside, one-sided at
// the borders.
inline GradientField gradient_field(const Tensor& T) {
  check(T.shape.rank() == 3 && T.shape[0] == kLayers,
        "gradient_field: expected [4,R,C], got " + T.shape.str());
  const std::int64_t R = T.shape[1], C = T.shape[2];
  check(R >= 3 && C >= 3, "gradient_field: grid must be at least 3x3");
  GradientField g{Tensor(T.shape), Tensor(T.shape)};
  for (int l = 0; l < kLayers; ++l)
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t c = 0; c < C; ++c) {
        const auto at = [&](std::int64_t rr, std::int64_t cc) {
          return T[(l * R + rr) * C + cc];
        };
        const std::int64_t i = (l * R + r) * C + c;
        g.gx[i] = c == 0       ? at(r, 1) - at(r, 0)
                  : c == C - 1 ? at(r, C - 1) - at(r, C - 2)
                               : 0.5 * (at(r, c + 1) - at(r, c - 1));
        g.gy[i] = r == 0       ? at(1, c) - at(0, c)
                  : r == R - 1 ? at(R - 1, c) - at(R - 2, c)
                               : 0.5 * (at(r + 1, c) - at(r - 1, c));
      }
  return g;
}

struct GradScore {
  double magnitude_rmse = 0.0;
  double angular_error = 0.0;  // radians; meaningless when !angular_defined
  bool angular_defined = false;
};

inline GradScore gradient_score(const GradientField& pred, const GradientField& truth) {
  check(pred.gx.shape == truth.gx.shape && pred.gy.shape == truth.gy.shape,
        "gradient_score: shape mismatch");
  const Tensor pm = pred.magnitude(), tm = truth.magnitude();
  const std::int64_t n = pm.numel();
  GradScore s;
  double sq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pm[i] - tm[i];
    sq += d * d;
  }
  s.magnitude_rmse = std::sqrt(sq / static_cast<double>(n));

  std::vector<double> sorted(tm.data);
  std::sort(sorted.begin(), sorted.end());
  const double cutoff = sorted[static_cast<std::size_t>(
      static_cast<double>(n - 1) * 0.1)];
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    // A zero truth vector has no direction regardless of the percentile cut.
    if (tm[i] < cutoff || tm[i] < 1e-30) continue;
    ++count;
    if (pm[i] < 1e-30) {
      // A direction-free prediction scores as orthogonal.
      acc += std::acos(0.0);
      continue;
    }
    // acos of the normalized dot is ill-conditioned near alignment; the
    // equivalent atan2 form is exact for colinear and orthogonal pairs.
    // Separate statements keep FP contraction from skewing the difference.
    const double xy = pred.gx[i] * truth.gy[i];
    const double yx = pred.gy[i] * truth.gx[i];
    const double dot = pred.gx[i] * truth.gx[i] + pred.gy[i] * truth.gy[i];
    acc += std::atan2(std::abs(xy - yx), dot);
  }
  if (count > 0) {
    s.angular_defined = true;
    s.angular_error = acc / static_cast<double>(count);
  } else {
    s.angular_error = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

}  // namespace fsaheat
