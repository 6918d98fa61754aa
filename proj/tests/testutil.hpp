#pragma once

#include <functional>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "fsaheat/autodiff.hpp"
#include "fsaheat/rng.hpp"
#include "oracles.hpp"

namespace fsaheat::test {

// Central finite-difference check of a scalar-valued graph builder.
// f is re-run on fresh leaves for every probe; analytic gradients come from
// one backward pass. Large tensors are probed on an evenly spaced subset.
inline void check_gradients(const std::vector<Tensor>& params,
                            const std::function<Var(const std::vector<Var>&)>& f,
                            double step = 1e-5, double rtol = 1e-4, double atol = 1e-7,
                            std::int64_t max_probes_per_param = 64) {
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& t : params) leaves.push_back(leaf(t, true));
  Var loss = f(leaves);
  REQUIRE(loss.shape().numel() == 1);
  backward(loss);
  std::vector<Tensor> analytic;
  for (Var& v : leaves) analytic.push_back(v.node()->grad);

  auto eval = [&](const std::vector<Tensor>& vals) {
    std::vector<Var> ls;
    ls.reserve(vals.size());
    for (const Tensor& t : vals) ls.push_back(constant(t));
    return f(ls).value()[0];
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::int64_t n = params[p].numel();
    const std::int64_t stride = std::max<std::int64_t>(1, n / max_probes_per_param);
    for (std::int64_t i = 0; i < n; i += stride) {
      std::vector<Tensor> vals = params;
      vals[p][i] = params[p][i] + step;
      const double fp = eval(vals);
      vals[p][i] = params[p][i] - step;
      const double fm = eval(vals);
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[p].numel() ? analytic[p][i] : 0.0;
      const double tol = atol + rtol * std::max(std::abs(fd), std::abs(an));
      INFO("param " << p << " index " << i << ": fd=" << fd << " analytic=" << an);
      REQUIRE(std::abs(fd - an) <= tol);
    }
  }
}

}  // namespace fsaheat::test
