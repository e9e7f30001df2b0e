#pragma once

#include <cmath>
#include <vector>

#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

enum class Family { gaussian, laplacian };
enum class Likelihood { bernoulli, gaussian_fixed_var };

// Posterior parameters per batch row: means (the symmetry statistics of the
// posterior) and strictly positive inverse scales (the momenta).  Positivity
// comes from the exponential parameterization: construct via from_raw and the
// raw head is unconstrained.
template <class T>
struct LatentParamsT {
  Tensor<T> means;           // [B, N_lat]
  Tensor<T> inv_scales;      // [B, N_lat], > 0
  Tensor<T> log_inv_scales;  // optional; defined when built from_raw
  Family family = Family::gaussian;

  static LatentParamsT from_raw(Tensor<T> means, const Tensor<T>& raw,
                                Family family) {
    if (means.shape() != raw.shape())
      throw ShapeError("latent params: means " + shape_str(means.shape()) +
                       " vs raw " + shape_str(raw.shape()));
    LatentParamsT p;
    p.means = std::move(means);
    p.log_inv_scales = raw;
    p.inv_scales = exp(raw);
    p.family = family;
    return p;
  }

  static LatentParamsT direct(Tensor<T> means, Tensor<T> inv_scales,
                              Family family) {
    LatentParamsT p;
    p.means = std::move(means);
    p.inv_scales = std::move(inv_scales);
    p.family = family;
    return p;
  }

  // log(inv_scales), reusing the raw head when available.
  Tensor<T> log_p() const {
    return log_inv_scales.defined() ? log_inv_scales : log(inv_scales);
  }

  // scale = 1 / inv_scales
  Tensor<T> scale() const {
    if (log_inv_scales.defined()) return exp(neg(log_inv_scales));
    return div(Tensor<T>::ones(inv_scales.shape()), inv_scales);
  }
};

using LatentParams = LatentParamsT<float>;

// Inverse-CDF map from uniform noise to a unit Laplace draw; u is clamped
// kNoiseClamp away from {0,1} so the log stays finite.
inline constexpr double kNoiseClamp = 1e-7;

template <class T>
T laplace_standard_from_uniform(T u) {
  T lo = T(kNoiseClamp), hi = T(1) - T(kNoiseClamp);
  u = u < lo ? lo : (u > hi ? hi : u);
  T w = u - T(0.5);
  T s = w > 0 ? T(1) : (w < 0 ? T(-1) : T(0));
  return -s * std::log(T(1) - T(2) * std::abs(w));
}

// Reparameterized draw. Gaussian: z = m + scale * eps with eps ~ N(0,1).
// Laplacian: z = m + scale * L(u) with u ~ U(0,1).  Differentiable in the
// parameters; the noise enters as a constant.
template <class T>
Tensor<T> sample(const LatentParamsT<T>& params, const Tensor<T>& noise) {
  if (noise.shape() != params.means.shape())
    throw ShapeError("sample: noise " + shape_str(noise.shape()) +
                     " vs means " + shape_str(params.means.shape()));
  Tensor<T> unit;
  if (params.family == Family::gaussian) {
    unit = noise;
  } else {
    std::vector<T> v(noise.size());
    const T* p = noise.data();
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = laplace_standard_from_uniform(p[i]);
    unit = Tensor<T>::from(noise.shape(), std::move(v));
  }
  return add(params.means, mul(params.scale(), unit));
}

// Convenience noise draws from a counter stream.
template <class T>
Tensor<T> draw_noise(Family family, Shape shape, CounterRng& rng) {
  std::size_t n = numel(shape);
  std::vector<T> v(n);
  if (family == Family::gaussian)
    for (auto& x : v) x = static_cast<T>(rng.next_normal());
  else
    for (auto& x : v) x = static_cast<T>(rng.next_double());
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// Closed-form divergences against the standard priors, summed over latents
// and averaged over the batch.

// KL( N(m, sigma) || N(0,1) ) = 1/2 (m^2 + sigma^2 - 1 - ln sigma^2)
template <class T>
Tensor<T> kl_gaussian(const LatentParamsT<T>& params) {
  if (params.family != Family::gaussian)
    throw ContractError("kl_gaussian on a non-gaussian posterior");
  Tensor<T> m = params.means;
  Tensor<T> logp = params.log_p();
  Tensor<T> sigma2 = exp(affine(logp, T(-2), T(0)));
  Tensor<T> term =
      add(add(mul(m, m), sigma2), affine(logp, T(2), T(-1)));
  Tensor<T> per_row = sum(term, {1});
  return mean(affine(per_row, T(0.5), T(0)));
}

// KL( Laplace(m, b) || Laplace(0,1) ) = |m| + b e^{-|m|/b} - 1 + ln(1/b)
template <class T>
Tensor<T> kl_laplace(const LatentParamsT<T>& params) {
  if (params.family != Family::laplacian)
    throw ContractError("kl_laplace on a non-laplacian posterior");
  Tensor<T> am = abs(params.means);
  Tensor<T> b = params.scale();
  Tensor<T> logp = params.log_p();  // ln(1/b)
  Tensor<T> term = add(add(am, mul(b, exp(neg(mul(am, params.inv_scales))))),
                       affine(logp, T(1), T(-1)));
  Tensor<T> per_row = sum(term, {1});
  return mean(per_row);
}

template <class T>
Tensor<T> kl_divergence(const LatentParamsT<T>& params) {
  return params.family == Family::gaussian ? kl_gaussian(params)
                                           : kl_laplace(params);
}

// ---------------------------------------------------------------------------
// Reconstruction error, summed over pixels and averaged over the batch.
// The probability-space variant serves the model pipeline, where decoded
// probabilities pass through inverse color/warp transforms before comparison.

template <class T>
Tensor<T> recon_error_probs(const Tensor<T>& x, const Tensor<T>& x_hat,
                            Likelihood likelihood) {
  if (x.shape() != x_hat.shape())
    throw ShapeError("recon_error: x " + shape_str(x.shape()) + " vs x_hat " +
                     shape_str(x_hat.shape()));
  if (x.rank() < 2) throw ShapeError("recon_error expects a batch dimension");
  std::vector<std::size_t> axes;
  for (std::size_t d = 1; d < x.rank(); ++d) axes.push_back(d);
  Tensor<T> per_pixel;
  if (likelihood == Likelihood::bernoulli) {
    Tensor<T> one_minus_x = affine(x, T(-1), T(1));
    Tensor<T> one_minus_h = affine(x_hat, T(-1), T(1));
    per_pixel = neg(add(mul(x, log(x_hat)), mul(one_minus_x, log(one_minus_h))));
  } else {
    Tensor<T> d = sub(x, x_hat);
    per_pixel = affine(mul(d, d), T(0.5), T(0));
  }
  return mean(sum(per_pixel, axes));
}

template <class T>
Tensor<T> recon_error(const Tensor<T>& x, const Tensor<T>& x_hat_logits,
                      Likelihood likelihood) {
  return recon_error_probs(x, sigmoid(x_hat_logits), likelihood);
}

// Eq-2.2 style loss split; total is the single sum of the two terms.
template <class T>
struct ElboTermsT {
  Tensor<T> recon_error;
  Tensor<T> gen_error;
  Tensor<T> total;

  static ElboTermsT make(Tensor<T> recon, Tensor<T> gen) {
    ElboTermsT e;
    e.recon_error = recon;
    e.gen_error = gen;
    e.total = add(e.recon_error, e.gen_error);
    return e;
  }
};

using ElboTerms = ElboTermsT<float>;

// ---------------------------------------------------------------------------
// Test-time mixture posterior, Eq. 3.1: draw a class per observation from the
// classifier weights, then sample that class's posterior.

template <class T>
struct MixturePosteriorT {
  std::vector<LatentParamsT<T>> components;  // one per class
  Tensor<T> weights;                         // [B, N_C]

  std::vector<std::size_t> draw_classes(CounterRng& rng) const {
    std::size_t B = weights.shape()[0], C = weights.shape()[1];
    const T* w = weights.data();
    std::vector<std::size_t> cls(B);
    for (std::size_t b = 0; b < B; ++b) {
      double u = rng.next_double();
      double acc = 0.0;
      std::size_t pick = C - 1;
      for (std::size_t c = 0; c < C; ++c) {
        acc += static_cast<double>(w[b * C + c]);
        if (u < acc) {
          pick = c;
          break;
        }
      }
      cls[b] = pick;
    }
    return cls;
  }

  // Plain-value draw (no autodiff); one row per observation from its class.
  Tensor<T> sample_values(const std::vector<std::size_t>& classes,
                          CounterRng& rng) const {
    std::size_t B = weights.shape()[0];
    std::size_t L = components.at(0).means.shape()[1];
    std::vector<T> z(B * L);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& comp = components.at(classes[b]);
      const T* m = comp.means.data();
      const T* p = comp.inv_scales.data();
      for (std::size_t l = 0; l < L; ++l) {
        T scale = T(1) / p[b * L + l];
        T unit;
        if (comp.family == Family::gaussian)
          unit = static_cast<T>(rng.next_normal());
        else
          unit = laplace_standard_from_uniform(
              static_cast<T>(rng.next_double()));
        z[b * L + l] = m[b * L + l] + scale * unit;
      }
    }
    return Tensor<T>::from({B, L}, std::move(z));
  }
};

using MixturePosterior = MixturePosteriorT<float>;

inline constexpr double kWeightRowTol = 1e-4;

template <class T>
MixturePosteriorT<T> mixture_posterior(std::vector<LatentParamsT<T>> per_class,
                                       Tensor<T> weights) {
  if (weights.rank() != 2)
    throw ShapeError("mixture weights must be [B, N_C]");
  if (weights.shape()[1] != per_class.size())
    throw ShapeError("mixture: component count " +
                     std::to_string(per_class.size()) +
                     " does not match weights " + shape_str(weights.shape()));
  std::size_t B = weights.shape()[0], C = weights.shape()[1];
  const T* w = weights.data();
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += static_cast<double>(w[b * C + c]);
    if (std::abs(s - 1.0) > kWeightRowTol)
      throw ContractError("mixture weight row " + std::to_string(b) +
                          " sums to " + std::to_string(s));
  }
  return {std::move(per_class), std::move(weights)};
}

// ---------------------------------------------------------------------------
// Spatial symmetry statistics log-density: independent Laplace factors over
// the horizontal/vertical coordinates, normalization p_h p_v / 4.

inline double sss_log_density(double z_h, double z_v, double h_mu, double v_mu,
                              double p_h, double p_v) {
  if (p_h <= 0.0 || p_v <= 0.0)
    throw ContractError("sss_log_density requires positive momenta");
  return std::log(p_h * p_v / 4.0) - p_h * std::abs(z_h - h_mu) -
         p_v * std::abs(z_v - v_mu);
}

}  // namespace ace
