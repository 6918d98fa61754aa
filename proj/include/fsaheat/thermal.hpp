#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsaheat/tensor.hpp"

namespace fsaheat {

inline constexpr int kLayers = 4;
inline constexpr const char* kLayerNames[kLayers] = {"source", "tim", "spreader", "heatsink"};

struct LayerSpec {
  double t = 0.0;  // thickness (m)
  double l = 0.0;  // lateral side of the square footprint (m)
  double k = 0.0;  // isotropic conductivity (W/(m K))
};

// Conductivity assigned to grid cells outside a layer's physical footprint
// (underfill / dielectric surrogate).
inline constexpr double kFillFactor = 0.05;

struct StackConfig {
  std::array<LayerSpec, kLayers> layers{};  // source, TIM, spreader, heatsink
  double h = 0.0;       // heatsink-top heat transfer coefficient (W/(m^2 K))
  double t_amb = 298.15;  // ambient (K)
  std::int64_t rows = 0, cols = 0;

  double side() const { return layers[3].l; }
  double dy() const { return side() / static_cast<double>(rows); }
  double dx() const { return side() / static_cast<double>(cols); }

  void validate() const {
    for (int i = 0; i < kLayers; ++i) {
      check(layers[i].t > 0.0, std::string("StackConfig: ") + kLayerNames[i] + " thickness must be > 0");
      check(layers[i].k > 0.0, std::string("StackConfig: ") + kLayerNames[i] + " conductivity must be > 0");
      check(layers[i].l > 0.0, std::string("StackConfig: ") + kLayerNames[i] + " side must be > 0");
    }
    check(layers[0].l <= layers[1].l && layers[1].l <= layers[2].l && layers[2].l <= layers[3].l,
          "StackConfig: layer footprints must be nested (source <= tim <= spreader <= heatsink)");
    check(h > 0.0, "StackConfig: heat transfer coefficient must be > 0");
    check(std::isfinite(t_amb), "StackConfig: ambient temperature must be finite");
    // The solver itself accepts any grid down to a single column of cells;
    // dataset/network configs impose their own stricter resolution rules.
    check(rows >= 1 && cols >= 1, "StackConfig: grid must be at least 1x1");
  }

  // Cell-center footprint test on the lateral grid (layers share the grid,
  // centered on the heatsink footprint).
  bool in_footprint(int layer, std::int64_t r, std::int64_t c) const {
    const double half = layers[layer].l / 2.0;
    const double y = (static_cast<double>(r) + 0.5) * dy() - side() / 2.0;
    const double x = (static_cast<double>(c) + 0.5) * dx() - side() / 2.0;
    const double eps = 1e-12 * side();
    return std::abs(y) <= half + eps && std::abs(x) <= half + eps;
  }

  double cell_k(int layer, std::int64_t r, std::int64_t c) const {
    return in_footprint(layer, r, c) ? layers[layer].k : kFillFactor * layers[layer].k;
  }
};

// Node equations in temperature rise theta = T - T_amb: off-diagonals are
// -g for each conductance, diagonals the incident sums plus the heatsink-top
// series term, so G is symmetric and strictly diagonally dominant on the
// heatsink rows.
struct ConductanceNetwork {
  std::int64_t R = 0, C = 0;
  std::vector<double> diag;   // n
  std::vector<double> east;   // g to (l,r,c+1); 0 on the last column
  std::vector<double> south;  // g to (l,r+1,c); 0 on the last row
  std::vector<double> up;     // g to (l+1,r,c); 0 on the heatsink layer
  std::vector<double> top;    // heatsink-top series(conduction, convection); 0 elsewhere
  std::vector<double> q;      // load (W)

  std::int64_t n() const { return kLayers * R * C; }
  std::int64_t idx(std::int64_t l, std::int64_t r, std::int64_t c) const {
    return (l * R + r) * C + c;
  }

  void matvec(const double* x, double* y) const {
    const std::int64_t N = n();
    for (std::int64_t i = 0; i < N; ++i) y[i] = diag[static_cast<std::size_t>(i)] * x[i];
    for (std::int64_t l = 0; l < kLayers; ++l)
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t i = idx(l, r, c);
          const double e = east[static_cast<std::size_t>(i)];
          if (e != 0.0) {
            y[i] -= e * x[i + 1];
            y[i + 1] -= e * x[i];
          }
          const double s = south[static_cast<std::size_t>(i)];
          if (s != 0.0) {
            y[i] -= s * x[i + C];
            y[i + C] -= s * x[i];
          }
          const double u = up[static_cast<std::size_t>(i)];
          if (u != 0.0) {
            y[i] -= u * x[i + R * C];
            y[i + R * C] -= u * x[i];
          }
        }
  }
};

inline ConductanceNetwork assemble(const StackConfig& cfg, const Tensor& power) {
  cfg.validate();
  check(power.shape == Shape{kLayers, cfg.rows, cfg.cols},
        "assemble: power map shape " + power.shape.str() + " does not match grid [4," +
            std::to_string(cfg.rows) + "," + std::to_string(cfg.cols) + "]");
  const std::int64_t R = cfg.rows, C = cfg.cols;
  const double dx = cfg.dx(), dy = cfg.dy();
  const double area = dx * dy;
  ConductanceNetwork net;
  net.R = R;
  net.C = C;
  const std::size_t N = static_cast<std::size_t>(net.n());
  net.diag.assign(N, 0.0);
  net.east.assign(N, 0.0);
  net.south.assign(N, 0.0);
  net.up.assign(N, 0.0);
  net.top.assign(N, 0.0);
  net.q.assign(N, 0.0);

  // Series of two half-cells; each term is length / (k * cross-section).
  auto series2 = [](double r1, double r2) { return 1.0 / (r1 + r2); };

  for (int l = 0; l < kLayers; ++l) {
    const double t = cfg.layers[l].t;
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t i = net.idx(l, r, c);
        const double ka = cfg.cell_k(l, r, c);
        // Lateral east neighbor: cross-section t*dy over half-length dx/2 each side.
        if (c + 1 < C) {
          const double kb = cfg.cell_k(l, r, c + 1);
          const double g = series2(dx / (2.0 * ka * t * dy), dx / (2.0 * kb * t * dy));
          net.east[static_cast<std::size_t>(i)] = g;
          net.diag[static_cast<std::size_t>(i)] += g;
          net.diag[static_cast<std::size_t>(net.idx(l, r, c + 1))] += g;
        }
        // Lateral south neighbor: cross-section t*dx over half-length dy/2.
        if (r + 1 < R) {
          const double kb = cfg.cell_k(l, r + 1, c);
          const double g = series2(dy / (2.0 * ka * t * dx), dy / (2.0 * kb * t * dx));
          net.south[static_cast<std::size_t>(i)] = g;
          net.diag[static_cast<std::size_t>(i)] += g;
          net.diag[static_cast<std::size_t>(net.idx(l, r + 1, c))] += g;
        }
        // Vertical neighbor in the next layer: half thicknesses over cell area.
        if (l + 1 < kLayers) {
          const double kb = cfg.cell_k(l + 1, r, c);
          const double tb = cfg.layers[l + 1].t;
          const double g = series2(t / (2.0 * ka * area), tb / (2.0 * kb * area));
          net.up[static_cast<std::size_t>(i)] = g;
          net.diag[static_cast<std::size_t>(i)] += g;
          net.diag[static_cast<std::size_t>(net.idx(l + 1, r, c))] += g;
        }
        // Heatsink top: half-cell conduction in series with convection h*area.
        if (l == kLayers - 1) {
          const double g = series2(t / (2.0 * ka * area), 1.0 / (cfg.h * area));
          net.top[static_cast<std::size_t>(i)] = g;
          net.diag[static_cast<std::size_t>(i)] += g;
        }
        net.q[static_cast<std::size_t>(i)] = power[(l * R + r) * C + c];
      }
  }
  return net;
}

struct SolveInfo {
  std::int64_t iterations = 0;
  double residual = 0.0;
};

// Jacobi-preconditioned conjugate gradient on the conductance network.
// Returns theta as [4,R,C]; T = T_amb + theta.
inline Tensor solve(const ConductanceNetwork& net, double tol = 1e-10,
                    SolveInfo* info = nullptr) {
  const std::int64_t N = net.n();
  Tensor theta(Shape{kLayers, net.R, net.C});
  double qnorm = 0.0;
  for (std::int64_t i = 0; i < N; ++i) qnorm += net.q[static_cast<std::size_t>(i)] * net.q[static_cast<std::size_t>(i)];
  qnorm = std::sqrt(qnorm);
  if (qnorm == 0.0) {
    if (info) *info = {0, 0.0};
    return theta;
  }
  std::vector<double> x(static_cast<std::size_t>(N), 0.0);
  std::vector<double> r(net.q.begin(), net.q.end());
  std::vector<double> z(static_cast<std::size_t>(N));
  std::vector<double> p(static_cast<std::size_t>(N));
  std::vector<double> ap(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) z[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)] / net.diag[static_cast<std::size_t>(i)];
  p = z;
  double rz = 0.0;
  for (std::int64_t i = 0; i < N; ++i) rz += r[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
  const std::int64_t cap = 20 * N;
  double rel = 1.0;
  std::int64_t it = 0;
  for (; it < cap; ++it) {
    net.matvec(p.data(), ap.data());
    double pap = 0.0;
    for (std::int64_t i = 0; i < N; ++i) pap += p[static_cast<std::size_t>(i)] * ap[static_cast<std::size_t>(i)];
    const double alpha = rz / pap;
    double rnorm = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
      x[static_cast<std::size_t>(i)] += alpha * p[static_cast<std::size_t>(i)];
      r[static_cast<std::size_t>(i)] -= alpha * ap[static_cast<std::size_t>(i)];
      rnorm += r[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
    }
    rel = std::sqrt(rnorm) / qnorm;
    if (rel <= tol) {
      ++it;
      break;
    }
    double rz2 = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
      z[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)] / net.diag[static_cast<std::size_t>(i)];
      rz2 += r[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
    }
    const double beta = rz2 / rz;
    rz = rz2;
    for (std::int64_t i = 0; i < N; ++i) p[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)] + beta * p[static_cast<std::size_t>(i)];
  }
  check(rel <= tol, "solve: CG iteration cap " + std::to_string(cap) +
                        " exceeded, residual " + std::to_string(rel));
  if (info) *info = {it, rel};
  std::copy(x.begin(), x.end(), theta.data.begin());
  return theta;
}

// |sum of heatsink-top flux - sum of injected power| / total power.
inline double energy_balance(const ConductanceNetwork& net, const Tensor& theta) {
  check(theta.shape == Shape{kLayers, net.R, net.C},
        "energy_balance: field shape " + theta.shape.str() + " does not match network");
  double qsum = 0.0;
  for (double v : net.q) qsum += v;
  if (qsum == 0.0) return 0.0;
  double flux = 0.0;
  const std::int64_t base = (kLayers - 1) * net.R * net.C;
  for (std::int64_t i = 0; i < net.R * net.C; ++i)
    flux += net.top[static_cast<std::size_t>(base + i)] * theta[base + i];
  return std::abs(flux - qsum) / std::abs(qsum);
}

}  // namespace fsaheat
