#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

// Inverse-time decay with a 50-epoch time constant: lr(e) = base / (1 + e/50).
struct Schedule {
  double base_lr = 0.0015;
  double decay_epochs = 50.0;
};

inline double lr_at(const Schedule& s, std::size_t epoch) {
  return s.base_lr / (1.0 + static_cast<double>(epoch) / s.decay_epochs);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameter group handed to the optimizer and checkpointing.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

// Adam with bias correction over a fixed parameter list.  Gradients containing
// NaN abort the step before any parameter is touched, reporting the offending
// group.
template <class T>
class AdamT {
 public:
  AdamT() = default;
  explicit AdamT(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::vector<ParamRef<T>>& params, double lr) {
    if (slots_.size() != params.size()) {
      slots_.clear();
      slots_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m.assign(params[i].tensor.size(), T(0));
        slots_[i].v.assign(params[i].tensor.size(), T(0));
      }
    }
    for (auto& p : params) {
      if (!p.tensor.has_grad())
        throw ContractError("adam step before backward: " + p.name);
      for (T g : p.tensor.grad())
        if (std::isnan(static_cast<double>(g)))
          throw NumericError("NaN gradient in parameter group '" + p.name +
                             "'");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& slot = slots_[i];
      auto vals = params[i].tensor.values();
      auto grads = params[i].tensor.grad();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        double g = static_cast<double>(grads[j]);
        double m = cfg_.beta1 * slot.m[j] + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * slot.v[j] + (1.0 - cfg_.beta2) * g * g;
        slot.m[j] = static_cast<T>(m);
        slot.v[j] = static_cast<T>(v);
        double mh = m / bc1;
        double vh = v / bc2;
        vals[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void restore(std::vector<Slot> slots, std::size_t t) {
    slots_ = std::move(slots);
    t_ = t;
  }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

using Adam = AdamT<float>;

// ---------------------------------------------------------------------------
// Weight initialization.  Convolutional kernels: U(-1,1) / sqrt(prod dims).
// Dense layers: fan-based uniform U(+-sqrt(6/(fan_in+fan_out))).  Biases zero.

template <class T>
Tensor<T> init_conv_kernel(Shape shape, CounterRng& rng) {
  std::size_t n = numel(shape);
  double norm = std::sqrt(static_cast<double>(n));
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0) / norm);
  return Tensor<T>::param(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> init_dense_weight(std::size_t out, std::size_t in, CounterRng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> v(out * in);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>::param({out, in}, std::move(v));
}

template <class T>
Tensor<T> init_zero_param(Shape shape) {
  std::size_t n = numel(shape);
  return Tensor<T>::param(std::move(shape), std::vector<T>(n, T(0)));
}

}  // namespace ace
