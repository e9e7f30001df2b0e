#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "ace/gradcheck.hpp"
#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace::test {

template <class T>
Tensor<T> random_tensor(Shape shape, CounterRng& rng, T lo = T(-1),
                        T hi = T(1)) {
  std::size_t n = numel(shape);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <class A, class B>
bool allclose(const A& a, const B& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) > tol)
      return false;
  return true;
}

template <class A, class B>
bool bit_equal(const A& a, const B& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(a[i])) != 0) return false;
  return true;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) -
                             static_cast<double>(b[i])));
  return m;
}

// Mean and standard error of a sample.
struct MeanSe {
  double mean = 0, se = 0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - m) * (x - m);
  var /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace ace::test
