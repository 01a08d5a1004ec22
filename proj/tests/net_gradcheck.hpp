#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "regfree/network.hpp"
#include "regfree/objectives.hpp"

namespace testutil {

using regfreenet::NetworkConfig;
using regfreenet::RegFreeNet;
using regfreenet::Shape3;

inline constexpr double kAbsoluteFloor = 1e-3;

struct NetGradReport {
  double max_rel_err = 0.0;
  std::size_t checks = 0;
  std::size_t tensors = 0;
  std::string worst;
};

/// Fixed problem: random input in [0,1], random binary target, random slope target.
struct NetProblem {
  regfreenet::nn::FeatureMap<double> input;
  std::vector<std::uint8_t> target;
  regfreenet::SlopePair slope;
  std::uint64_t dropout_seed = 99;

  NetProblem(Shape3 s, std::uint64_t seed) : input(1, s) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : input.data) v = u(rng);
    target.resize(s.voxels());
    for (auto& t : target) t = u(rng) < 0.3 ? 1 : 0;
    slope = {u(rng) - 0.5, u(rng) - 0.5};
  }
};

/// Loss of `net` on `prob`; dropout masks are reseeded so every call sees the same mask.
template <class T>
double net_loss(RegFreeNet<T>& net, const NetProblem& prob, bool backward) {
  regfreenet::nn::FeatureMap<T> x(1, prob.input.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<T>(prob.input.data[i]);
  std::mt19937_64 drop(prob.dropout_seed);
  const auto out = net.forward(x, true, drop);
  const bool spb = net.config().use_spb;
  std::optional<regfreenet::SlopePair> k;
  if (out.slope) k = regfreenet::SlopePair{static_cast<double>((*out.slope)[0]), static_cast<double>((*out.slope)[1])};
  if (!backward) {
    return regfreenet::total_loss<T>(out.probability.data, prob.target, k ? &*k : nullptr, &prob.slope, spb).total;
  }
  regfreenet::nn::FeatureMap<T> dprob(1, out.probability.shape);
  std::array<double, 2> gk{};
  const double l = regfreenet::total_loss<T>(out.probability.data, prob.target, k ? &*k : nullptr, &prob.slope, spb, {},
                                          std::span<T>(dprob.data), &gk)
                       .total;
  std::optional<std::array<T, 2>> dk;
  if (spb) dk = std::array<T, 2>{static_cast<T>(gk[0]), static_cast<T>(gk[1])};
  net.backward(dprob, dk);
  return l;
}

/// Gradient check of the full network loss. Analytic gradients come from `Net<T>`; the
/// finite differences are always taken on a double copy with identical parameters.
/// Every parameter tensor gets one random directional-derivative check plus
/// `samples` individual entries (all entries for tensors no larger than `samples`).
/// Errors are |a - n| / max(|a|, |n|, floor) with floor = max(1e-3 * max |grad| of the tensor,
/// kAbsoluteFloor). Difference quotients of an O(1) loss carry ~1e-9 of roundoff, so entries
/// smaller than the floor are held to an absolute bound of tol * floor instead.
///
/// The loss is piecewise smooth (ReLU, max pooling), and a perturbation of a whole tensor
/// moves thousands of pre-activations, some of which sit closer to a kink than any usable
/// step. A kink on one side spoils the central quotient but not the one-sided quotient
/// pointing away from it. Each check therefore forms central, forward and backward
/// quotients at every step in `steps` and scores the one closest to the analytic value;
/// a wrong gradient misses at all of them.
template <class T>
NetGradReport check_network_gradients(const NetworkConfig& cfg, Shape3 input, std::size_t samples,
                                      std::vector<double> steps = {1e-6, 1e-7, 1e-8}, std::uint64_t seed = 1,
                                      const std::function<void(RegFreeNet<T>&)>& tamper = {}) {
  RegFreeNet<T> net(cfg);
  RegFreeNet<double> ref(cfg);
  const auto& pt = net.parameters();
  const auto& pd = ref.parameters();
  for (std::size_t k = 0; k < pt.size(); ++k)
    for (std::size_t i = 0; i < pt[k]->size(); ++i) pd[k]->value[i] = static_cast<double>(pt[k]->value[i]);

  const NetProblem prob(input, seed);
  net.zero_grad();
  net_loss(net, prob, true);
  if (tamper) tamper(net);  // negative controls corrupt the analytic gradients here

  const double l0 = net_loss(ref, prob, false);
  std::mt19937_64 rng(seed + 7);
  NetGradReport rep;
  // Central difference of the double model along `dir` (scaled by each step), best match to `a`.
  auto record = [&](double a, auto&& shift, double floor, const std::string& what) {
    double err = 1e300, n = 0.0;
    for (double h : steps) {
      shift(h);
      const double lp = net_loss(ref, prob, false);
      shift(-h);
      const double lm = net_loss(ref, prob, false);
      shift(0.0);
      for (const double fd : {(lp - lm) / (2 * h), (lp - l0) / h, (l0 - lm) / h}) {
        const double e = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
        if (e < err) {
          err = e;
          n = fd;
        }
      }
    }
    ++rep.checks;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = what + " analytic " + std::to_string(a) + " numeric " + std::to_string(n);
    }
  };

  for (std::size_t k = 0; k < pt.size(); ++k) {
    auto& p = *pd[k];
    const auto& g = pt[k]->grad;
    double gmax = 0.0;
    for (T v : g) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
    const double floor = std::max(1e-3 * gmax, kAbsoluteFloor);
    ++rep.tensors;

    // Directional derivative along a random sign vector.
    std::vector<double> dir(p.size());
    std::bernoulli_distribution coin(0.5);
    double analytic = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      dir[i] = coin(rng) ? 1.0 : -1.0;
      analytic += dir[i] * static_cast<double>(g[i]);
    }
    const std::vector<double> keep = p.value;
    auto along = [&](double t) {
      for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = keep[i] + t * dir[i];
    };
    record(analytic, along, floor * std::sqrt(static_cast<double>(p.size())), p.name + " (direction)");
    p.value = keep;

    // Individual entries.
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > samples) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(samples);
    }
    for (std::size_t i : idx) {
      auto entry = [&](double t) { p.value[i] = keep[i] + t; };
      record(static_cast<double>(g[i]), entry, floor, p.name + "[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

}  // namespace testutil
