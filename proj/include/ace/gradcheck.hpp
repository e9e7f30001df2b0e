#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  bool pass = false;
};

// Compares the analytic gradient of a scalar-valued f at x against central
// finite differences. f must be deterministic (fix any noise outside f).
//
// Convention for kinked functions (abs, relu, max, bilinear cell borders):
// the caller samples x away from kink loci, resampling offending coordinates;
// see sample_uniform_away_from.
template <class T, class F>
GradcheckReport gradcheck(F&& f, Tensor<T> x, T eps, double tol) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = f(x);
  if (y.size() != 1) throw ContractError("gradcheck: f must be scalar-valued");
  backward(y);
  std::vector<T> analytic(x.grad().begin(), x.grad().end());

  GradcheckReport rep;
  T* vals = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    T keep = vals[i];
    vals[i] = keep + eps;
    T up = f(x).item();
    vals[i] = keep - eps;
    T down = f(x).item();
    vals[i] = keep;
    double numeric = (static_cast<double>(up) - static_cast<double>(down)) /
                     (2.0 * static_cast<double>(eps));
    double a = static_cast<double>(analytic[i]);
    double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
    double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// Uniform draw on [lo, hi] resampling any coordinate that lands within
// `margin` of a kink locus (as reported by `near_kink`).
template <class T, class NearKink>
Tensor<T> sample_uniform_away_from(Shape shape, T lo, T hi, CounterRng& rng,
                                   T margin, NearKink&& near_kink) {
  std::size_t n = numel(shape);
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    T x;
    do {
      x = static_cast<T>(rng.uniform(lo, hi));
    } while (near_kink(x, margin));
    v[i] = x;
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Kink set {0}: the abs/relu case.
template <class T>
Tensor<T> sample_uniform_nonzero(Shape shape, T lo, T hi, CounterRng& rng,
                                 T margin) {
  return sample_uniform_away_from(std::move(shape), lo, hi, rng, margin,
                                  [](T x, T m) { return std::abs(x) < m; });
}

}  // namespace ace
