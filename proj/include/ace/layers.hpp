#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

enum class Padding { same, valid };
enum class Activation { none, relu, sigmoid, tanh };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    default: return x;
  }
}

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t pad,
                                   std::size_t stride) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of x[B,C,H,W] with K[O,C,kh,kw] plus bias[O].
// "same" keeps spatial extents at stride 1 and requires odd kernels.

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& K, const Tensor<T>& bias,
                 Padding padding = Padding::same, std::size_t stride = 1) {
  if (x.rank() != 4 || K.rank() != 4)
    throw ShapeError("conv2d expects x[B,C,H,W], K[O,C,kh,kw]");
  std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  std::size_t O = K.shape()[0], KC = K.shape()[1], kh = K.shape()[2], kw = K.shape()[3];
  if (C != KC)
    throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) +
                     " vs K " + shape_str(K.shape()));
  if (bias.size() != O) throw ShapeError("conv2d bias size mismatch");
  if (padding == Padding::same && (kh % 2 == 0 || kw % 2 == 0))
    throw ContractError("same-padded conv2d requires odd kernel extents");
  std::size_t ph = padding == Padding::same ? (kh - 1) / 2 : 0;
  std::size_t pw = padding == Padding::same ? (kw - 1) / 2 : 0;
  if (H + 2 * ph < kh || W + 2 * pw < kw)
    throw ShapeError("conv2d kernel " + shape_str(K.shape()) +
                     " larger than padded input " + shape_str(x.shape()));
  std::size_t Ho = detail::conv_out_extent(H, kh, ph, stride);
  std::size_t Wo = detail::conv_out_extent(W, kw, pw, stride);

  std::vector<T> out(B * O * Ho * Wo);
  const T* px = x.data();
  const T* pk = K.data();
  const T* pb = bias.data();
#pragma omp parallel for schedule(static)
  for (long long bo = 0; bo < static_cast<long long>(B * O); ++bo) {
    std::size_t b = bo / O, o = bo % O;
    T* dst = out.data() + (b * O + o) * Ho * Wo;
    const T* kker = pk + o * C * kh * kw;
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        T acc = pb[o];
        long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
        long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
        for (std::size_t c = 0; c < C; ++c) {
          const T* xc = px + (b * C + c) * H * W;
          const T* kc = kker + c * kh * kw;
          for (std::size_t di = 0; di < kh; ++di) {
            long long y = y0 + static_cast<long long>(di);
            if (y < 0 || y >= static_cast<long long>(H)) continue;
            for (std::size_t dj = 0; dj < kw; ++dj) {
              long long xx = x0 + static_cast<long long>(dj);
              if (xx < 0 || xx >= static_cast<long long>(W)) continue;
              acc += xc[y * W + xx] * kc[di * kw + dj];
            }
          }
        }
        dst[i * Wo + j] = acc;
      }
    }
  }

  return make_op<T>(
      "conv2d", {B, O, Ho, Wo}, std::move(out), {x, K, bias},
      [B, C, H, W, O, kh, kw, ph, pw, stride, Ho, Wo](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& nk = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* g = self.grad.data();
        if (nx.requires_grad) {
          nx.ensure_grad();
#pragma omp parallel for schedule(static)
          for (long long b = 0; b < static_cast<long long>(B); ++b) {
            for (std::size_t o = 0; o < O; ++o) {
              const T* grow = g + (b * O + o) * Ho * Wo;
              const T* kker = nk.value.data() + o * C * kh * kw;
              for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                  T gv = grow[i * Wo + j];
                  if (gv == T(0)) continue;
                  long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
                  long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
                  for (std::size_t c = 0; c < C; ++c) {
                    T* gx = nx.grad.data() + (b * C + c) * H * W;
                    const T* kc = kker + c * kh * kw;
                    for (std::size_t di = 0; di < kh; ++di) {
                      long long y = y0 + static_cast<long long>(di);
                      if (y < 0 || y >= static_cast<long long>(H)) continue;
                      for (std::size_t dj = 0; dj < kw; ++dj) {
                        long long xx = x0 + static_cast<long long>(dj);
                        if (xx < 0 || xx >= static_cast<long long>(W)) continue;
                        gx[y * W + xx] += gv * kc[di * kw + dj];
                      }
                    }
                  }
                }
            }
          }
        }
        if (nk.requires_grad || nb.requires_grad) {
          if (nk.requires_grad) nk.ensure_grad();
          if (nb.requires_grad) nb.ensure_grad();
#pragma omp parallel for schedule(static)
          for (long long o = 0; o < static_cast<long long>(O); ++o) {
            T* gk = nk.requires_grad ? nk.grad.data() + o * C * kh * kw : nullptr;
            T gb = T(0);
            for (std::size_t b = 0; b < B; ++b) {
              const T* grow = g + (b * O + o) * Ho * Wo;
              for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                  T gv = grow[i * Wo + j];
                  if (gv == T(0)) continue;
                  gb += gv;
                  if (!gk) continue;
                  long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
                  long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
                  for (std::size_t c = 0; c < C; ++c) {
                    const T* xc = nx.value.data() + (b * C + c) * H * W;
                    T* kc = gk + c * kh * kw;
                    for (std::size_t di = 0; di < kh; ++di) {
                      long long y = y0 + static_cast<long long>(di);
                      if (y < 0 || y >= static_cast<long long>(H)) continue;
                      for (std::size_t dj = 0; dj < kw; ++dj) {
                        long long xx = x0 + static_cast<long long>(dj);
                        if (xx < 0 || xx >= static_cast<long long>(W)) continue;
                        kc[di * kw + dj] += gv * xc[y * W + xx];
                      }
                    }
                  }
                }
            }
            if (nb.requires_grad) nb.grad[o] += gb;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// deconv2d: the exact adjoint of conv2d as a linear map.  Input u[B,I,H,W],
// kernel K[I,O,kh,kw] (conv layout read the other way), bias[O].  With valid
// padding and kh == stride the output extents are stride * input extents.

template <class T>
Tensor<T> deconv2d(const Tensor<T>& u, const Tensor<T>& K, const Tensor<T>& bias,
                   Padding padding = Padding::valid, std::size_t stride = 1) {
  if (u.rank() != 4 || K.rank() != 4)
    throw ShapeError("deconv2d expects u[B,I,H,W], K[I,O,kh,kw]");
  std::size_t B = u.shape()[0], I = u.shape()[1], H = u.shape()[2], W = u.shape()[3];
  std::size_t KI = K.shape()[0], O = K.shape()[1], kh = K.shape()[2], kw = K.shape()[3];
  if (I != KI)
    throw ShapeError("deconv2d channel mismatch: u " + shape_str(u.shape()) +
                     " vs K " + shape_str(K.shape()));
  if (bias.size() != O) throw ShapeError("deconv2d bias size mismatch");
  if (padding == Padding::same && (kh % 2 == 0 || kw % 2 == 0))
    throw ContractError("same-padded deconv2d requires odd kernel extents");
  std::size_t ph = padding == Padding::same ? (kh - 1) / 2 : 0;
  std::size_t pw = padding == Padding::same ? (kw - 1) / 2 : 0;
  std::size_t Ho = padding == Padding::same ? stride * H
                                            : stride * (H - 1) + kh;
  std::size_t Wo = padding == Padding::same ? stride * W
                                            : stride * (W - 1) + kw;

  std::vector<T> out(B * O * Ho * Wo, T(0));
  const T* pu = u.data();
  const T* pk = K.data();
  const T* pb = bias.data();
#pragma omp parallel for schedule(static)
  for (long long b = 0; b < static_cast<long long>(B); ++b) {
    for (std::size_t ic = 0; ic < I; ++ic) {
      const T* urow = pu + (b * I + ic) * H * W;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          T val = urow[i * W + j];
          if (val == T(0)) continue;
          long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
          long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
          for (std::size_t o = 0; o < O; ++o) {
            T* vrow = out.data() + (b * O + o) * Ho * Wo;
            const T* kc = pk + (ic * O + o) * kh * kw;
            for (std::size_t di = 0; di < kh; ++di) {
              long long y = y0 + static_cast<long long>(di);
              if (y < 0 || y >= static_cast<long long>(Ho)) continue;
              for (std::size_t dj = 0; dj < kw; ++dj) {
                long long xx = x0 + static_cast<long long>(dj);
                if (xx < 0 || xx >= static_cast<long long>(Wo)) continue;
                vrow[y * Wo + xx] += val * kc[di * kw + dj];
              }
            }
          }
        }
    }
  }
  if (bias.size()) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o) {
        T* vrow = out.data() + (b * O + o) * Ho * Wo;
        for (std::size_t p = 0; p < Ho * Wo; ++p) vrow[p] += pb[o];
      }
  }

  return make_op<T>(
      "deconv2d", {B, O, Ho, Wo}, std::move(out), {u, K, bias},
      [B, I, H, W, O, kh, kw, ph, pw, stride, Ho, Wo](Node<T>& self) {
        auto& nu = *self.parents[0];
        auto& nk = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* g = self.grad.data();
        // du = conv(g, K): du[b,ic,i,j] = sum_{o,di,dj} g[b,o,y,x] K[ic,o,di,dj]
        if (nu.requires_grad) {
          nu.ensure_grad();
#pragma omp parallel for schedule(static)
          for (long long b = 0; b < static_cast<long long>(B); ++b) {
            for (std::size_t ic = 0; ic < I; ++ic) {
              T* gu = nu.grad.data() + (b * I + ic) * H * W;
              for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                  T acc = T(0);
                  long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
                  long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
                  for (std::size_t o = 0; o < O; ++o) {
                    const T* grow = g + (b * O + o) * Ho * Wo;
                    const T* kc = nk.value.data() + (ic * O + o) * kh * kw;
                    for (std::size_t di = 0; di < kh; ++di) {
                      long long y = y0 + static_cast<long long>(di);
                      if (y < 0 || y >= static_cast<long long>(Ho)) continue;
                      for (std::size_t dj = 0; dj < kw; ++dj) {
                        long long xx = x0 + static_cast<long long>(dj);
                        if (xx < 0 || xx >= static_cast<long long>(Wo)) continue;
                        acc += grow[y * Wo + xx] * kc[di * kw + dj];
                      }
                    }
                  }
                  gu[i * W + j] += acc;
                }
            }
          }
        }
        if (nk.requires_grad) {
          nk.ensure_grad();
#pragma omp parallel for schedule(static)
          for (long long ic = 0; ic < static_cast<long long>(I); ++ic) {
            for (std::size_t o = 0; o < O; ++o) {
              T* gk = nk.grad.data() + (ic * O + o) * kh * kw;
              for (std::size_t b = 0; b < B; ++b) {
                const T* urow = nu.value.data() + (b * I + ic) * H * W;
                const T* grow = g + (b * O + o) * Ho * Wo;
                for (std::size_t i = 0; i < H; ++i)
                  for (std::size_t j = 0; j < W; ++j) {
                    T val = urow[i * W + j];
                    if (val == T(0)) continue;
                    long long y0 = static_cast<long long>(i * stride) - static_cast<long long>(ph);
                    long long x0 = static_cast<long long>(j * stride) - static_cast<long long>(pw);
                    for (std::size_t di = 0; di < kh; ++di) {
                      long long y = y0 + static_cast<long long>(di);
                      if (y < 0 || y >= static_cast<long long>(Ho)) continue;
                      for (std::size_t dj = 0; dj < kw; ++dj) {
                        long long xx = x0 + static_cast<long long>(dj);
                        if (xx < 0 || xx >= static_cast<long long>(Wo)) continue;
                        gk[di * kw + dj] += val * grow[y * Wo + xx];
                      }
                    }
                  }
              }
            }
          }
        }
        if (nb.requires_grad) {
          nb.ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
              const T* grow = g + (b * O + o) * Ho * Wo;
              T acc = T(0);
              for (std::size_t p = 0; p < Ho * Wo; ++p) acc += grow[p];
              nb.grad[o] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2.  Odd extents are padded right/bottom with -inf;
// gradient goes to the first maximal element of each window (row-major scan).

template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2x2 expects x[B,C,H,W]");
  std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  std::vector<T> out(B * C * Ho * Wo);
  std::vector<std::size_t> arg(out.size());
  const T* p = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = p + bc * H * W;
    T* dst = out.data() + bc * Ho * Wo;
    std::size_t* adst = arg.data() + bc * Ho * Wo;
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t besti = 0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            std::size_t y = 2 * i + di, xx = 2 * j + dj;
            if (y >= H || xx >= W) continue;
            T v = src[y * W + xx];
            if (v > best) {
              best = v;
              besti = bc * H * W + y * W + xx;
            }
          }
        dst[i * Wo + j] = best;
        adst[i * Wo + j] = besti;
      }
  }
  return make_op<T>("maxpool2x2", {B, C, Ho, Wo}, std::move(out), {x},
                    [arg = std::move(arg)](Node<T>& self) {
                      auto& nx = *self.parents[0];
                      if (!nx.requires_grad) return;
                      nx.ensure_grad();
                      for (std::size_t i = 0; i < self.value.size(); ++i)
                        nx.grad[arg[i]] += self.grad[i];
                    });
}

// ---------------------------------------------------------------------------
// Row softmax with max-subtraction.

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("softmax expects x[B,N]");
  std::size_t B = x.shape()[0], N = x.shape()[1];
  std::vector<T> out(B * N);
  const T* p = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = p + b * N;
    T m = row[0];
    for (std::size_t j = 1; j < N; ++j) m = std::max(m, row[j]);
    T z = T(0);
    for (std::size_t j = 0; j < N; ++j) {
      out[b * N + j] = std::exp(row[j] - m);
      z += out[b * N + j];
    }
    for (std::size_t j = 0; j < N; ++j) out[b * N + j] /= z;
  }
  return make_op<T>("softmax", {B, N}, std::move(out), {x},
                    [B, N](Node<T>& self) {
                      auto& nx = *self.parents[0];
                      if (!nx.requires_grad) return;
                      nx.ensure_grad();
                      for (std::size_t b = 0; b < B; ++b) {
                        const T* s = self.value.data() + b * N;
                        const T* g = self.grad.data() + b * N;
                        T dot = T(0);
                        for (std::size_t j = 0; j < N; ++j) dot += g[j] * s[j];
                        for (std::size_t j = 0; j < N; ++j)
                          nx.grad[b * N + j] += s[j] * (g[j] - dot);
                      }
                    });
}

// ---------------------------------------------------------------------------
// Inverted dropout: identity at inference, mask + 1/(1-rate) rescale while
// training.

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training,
                  CounterRng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout rate must lie in [0,1), got " +
                        std::to_string(rate));
  if (!training || rate == 0.0) return x;
  T scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.next_double() < rate ? T(0) : scale;
  std::vector<T> out(x.size());
  const T* p = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] * mask[i];
  return make_op<T>("dropout", x.shape(), std::move(out), {x},
                    [mask = std::move(mask)](Node<T>& self) {
                      auto& nx = *self.parents[0];
                      if (!nx.requires_grad) return;
                      nx.ensure_grad();
                      for (std::size_t i = 0; i < mask.size(); ++i)
                        nx.grad[i] += self.grad[i] * mask[i];
                    });
}

// ---------------------------------------------------------------------------
// Parameter bundles

template <class T>
struct DenseLayerT {
  Tensor<T> W;  // [out, in]
  Tensor<T> b;  // [out]
  Activation act = Activation::none;

  Tensor<T> apply(const Tensor<T>& x) const {
    return activate(add(matmul(x, transpose(W)), b), act);
  }
};

template <class T>
struct ConvLayerT {
  Tensor<T> K;  // [outC, inC, kh, kw]
  Tensor<T> b;  // [outC]
  Padding padding = Padding::same;
  std::size_t stride = 1;
  Activation act = Activation::none;

  Tensor<T> apply(const Tensor<T>& x) const {
    return activate(conv2d(x, K, b, padding, stride), act);
  }
};

template <class T>
struct DeconvLayerT {
  Tensor<T> K;  // [inC, outC, kh, kw]
  Tensor<T> b;  // [outC]
  Padding padding = Padding::valid;
  std::size_t stride = 1;
  Activation act = Activation::none;

  Tensor<T> apply(const Tensor<T>& x) const {
    return activate(deconv2d(x, K, b, padding, stride), act);
  }
};

using DenseLayer = DenseLayerT<float>;
using ConvLayer = ConvLayerT<float>;
using DeconvLayer = DeconvLayerT<float>;

}  // namespace ace
