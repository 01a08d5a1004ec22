#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "regfree/nn/tensor.hpp"
#include "test_util.hpp"

namespace testutil {

using regfreenet::nn::FeatureMap;
using regfreenet::nn::ParamList;

inline void fill_random(std::vector<double>& v, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : v) x = u(rng);
}

template <class F>
double central_difference(double& v, F&& f, double h = 1e-6) {
  const double keep = v;
  v = keep + h;
  const double lp = f();
  v = keep - h;
  const double lm = f();
  v = keep;
  return (lp - lm) / (2 * h);
}

/// Compares analytic gradients of L = sum(r * f(x)) against central differences for
/// every parameter entry and every input entry. `forward` runs the module; `backward`
/// maps dL/dy to dL/dx while accumulating parameter gradients.
inline void expect_gradients_match(const ParamList<double>& params, FeatureMap<double> x,
                                   const std::function<FeatureMap<double>(const FeatureMap<double>&)>& forward,
                                   const std::function<FeatureMap<double>(const FeatureMap<double>&)>& backward,
                                   double tol = 1e-6, std::uint64_t seed = 17) {
  std::mt19937_64 rng(seed);
  FeatureMap<double> y = forward(x);
  FeatureMap<double> r(y.channels, y.shape);
  fill_random(r.data, rng);
  auto loss = [&](const FeatureMap<double>& in) {
    const FeatureMap<double> out = forward(in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += r.data[i] * out.data[i];
    return s;
  };

  regfreenet::nn::zero_grad(params);
  forward(x);
  const FeatureMap<double> dx = backward(r);
  // Entries far below the largest gradient are compared against that scale, since the
  // difference quotient carries roundoff proportional to |L| / h.
  double gmax = 0.0;
  for (const auto* p : params)
    for (double g : p->grad) gmax = std::max(gmax, std::abs(g));
  for (double g : dx.data) gmax = std::max(gmax, std::abs(g));
  const double floor = std::max(1e-4, 1e-3 * gmax);
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double fd = central_difference(p->value[i], [&] { return loss(x); });
      ASSERT_LT(rel_err(p->grad[i], fd, floor), tol) << p->name << "[" << i << "] analytic " << p->grad[i] << " fd " << fd;
    }
  }
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double fd = central_difference(x.data[i], [&] { return loss(x); });
    ASSERT_LT(rel_err(dx.data[i], fd, floor), tol) << "input[" << i << "] analytic " << dx.data[i] << " fd " << fd;
  }
}

inline FeatureMap<double> random_map(int c, regfreenet::Shape3 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  FeatureMap<double> f(c, s);
  fill_random(f.data, rng, lo, hi);
  return f;
}

}  // namespace testutil
