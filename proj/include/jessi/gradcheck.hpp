#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "jessi/graph.hpp"
#include "jessi/rng.hpp"
#include "jessi/tensor.hpp"

namespace jessi {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference comparison against tape gradients. Analytic gradients
// come from build_analytic; the numeric side perturbs parameters and
// re-evaluates build_numeric. They are usually the same function; they differ
// when the graph contains gradient reversal, whose reported gradients belong
// to a sign-flipped surrogate objective rather than the forward value.
// Builders must be deterministic given the parameter values (stochastic
// pieces have to reseed internally). Meant for 64-bit mode.
template <typename Real, typename BuildAnalytic, typename BuildNumeric>
GradCheckResult gradient_check2(BuildAnalytic&& build_analytic, BuildNumeric&& build_numeric,
                                const std::vector<Parameter<Real>*>& params, double eps,
                                std::size_t max_coords, RngStream& rng) {
  auto eval = [&]() -> double {
    Graph<Real> g;
    Var loss = build_numeric(g);
    const double v = static_cast<double>(g.val(loss).data[0]);
    if (!std::isfinite(v)) throw ValueError("gradient_check: non-finite loss");
    return v;
  };

  for (auto* p : params) p->zero_grad();
  {
    Graph<Real> g;
    Var loss = build_analytic(g);
    if (!std::isfinite(static_cast<double>(g.val(loss).data[0])))
      throw ValueError("gradient_check: non-finite loss");
    g.backward(loss);
  }

  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  std::vector<std::size_t> coords(total);
  for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  if (total > max_coords) {
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (std::size_t flat : coords) {
    std::size_t offset = flat;
    Parameter<Real>* owner = nullptr;
    for (auto* p : params) {
      if (offset < p->value.size()) {
        owner = p;
        break;
      }
      offset -= p->value.size();
    }
    const Real saved = owner->value.data[offset];
    owner->value.data[offset] = saved + static_cast<Real>(eps);
    const double up = eval();
    owner->value.data[offset] = saved - static_cast<Real>(eps);
    const double down = eval();
    owner->value.data[offset] = saved;

    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = static_cast<double>(owner->grad.data[offset]);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, std::abs(analytic - numeric) / denom);
    ++result.coords_checked;
  }
  return result;
}

template <typename Real, typename BuildLoss>
GradCheckResult gradient_check(BuildLoss&& build_loss, const std::vector<Parameter<Real>*>& params,
                               double eps, std::size_t max_coords, RngStream& rng) {
  return gradient_check2<Real>(build_loss, build_loss, params, eps, max_coords, rng);
}

}  // namespace jessi
