#pragma once

#include <cmath>
#include <vector>

#include "ace/layers.hpp"
#include "ace/tensor.hpp"

namespace ace {

// Spatial symmetry statistics: theta[B,2,3] maps normalized output (target)
// coordinates to normalized input (source) coordinates, row layout
// [[a, b, tx], [c, d, ty]] so (x_s, y_s) = A * (x_t, y_t) + t.
template <class T>
struct AffineParamsT {
  Tensor<T> theta;

  static AffineParamsT identity(std::size_t batch) {
    std::vector<T> v(batch * 6, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
      v[b * 6 + 0] = T(1);
      v[b * 6 + 4] = T(1);
    }
    return {Tensor<T>::from({batch, 2, 3}, std::move(v))};
  }
};

// Color symmetry statistics: row-stochastic m[B,3,3] acting on RGB vectors.
template <class T>
struct ColorMatrixT {
  Tensor<T> m;

  static ColorMatrixT identity(std::size_t batch) {
    std::vector<T> v(batch * 9, T(0));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < 3; ++c) v[b * 9 + c * 3 + c] = T(1);
    return {Tensor<T>::from({batch, 3, 3}, std::move(v))};
  }
};

using AffineParams = AffineParamsT<float>;
using ColorMatrix = ColorMatrixT<float>;

struct CenterOfMass {
  double h = 0.0;  // mean column index
  double v = 0.0;  // mean row index
  double mass = 0.0;
};

// ---------------------------------------------------------------------------
// affine_grid: per output pixel the source coordinates theta * (x_t, y_t, 1),
// both in normalized [-1,1] coordinates (align-corners lattice).

template <class T>
Tensor<T> affine_grid(const AffineParamsT<T>& params, std::size_t H,
                      std::size_t W) {
  const Tensor<T>& theta = params.theta;
  if (theta.rank() != 3 || theta.shape()[1] != 2 || theta.shape()[2] != 3)
    throw ShapeError("affine_grid expects theta[B,2,3], got " +
                     shape_str(theta.shape()));
  if (H < 2 || W < 2) throw ContractError("affine_grid needs H, W >= 2");
  std::size_t B = theta.shape()[0];
  std::vector<T> out(B * H * W * 2);
  const T* t = theta.data();
  std::vector<T> xs(W), ys(H);
  for (std::size_t j = 0; j < W; ++j)
    xs[j] = T(2) * static_cast<T>(j) / static_cast<T>(W - 1) - T(1);
  for (std::size_t i = 0; i < H; ++i)
    ys[i] = T(2) * static_cast<T>(i) / static_cast<T>(H - 1) - T(1);
  for (std::size_t b = 0; b < B; ++b) {
    const T* tb = t + b * 6;
    T* dst = out.data() + b * H * W * 2;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        T* g = dst + (i * W + j) * 2;
        g[0] = tb[0] * xs[j] + tb[1] * ys[i] + tb[2];
        g[1] = tb[3] * xs[j] + tb[4] * ys[i] + tb[5];
      }
  }
  return make_op<T>("affine_grid", {B, H, W, 2}, std::move(out), {theta},
                    [B, H, W, xs, ys](Node<T>& self) {
                      auto& nt = *self.parents[0];
                      if (!nt.requires_grad) return;
                      nt.ensure_grad();
                      for (std::size_t b = 0; b < B; ++b) {
                        T* gt = nt.grad.data() + b * 6;
                        const T* g = self.grad.data() + b * H * W * 2;
                        for (std::size_t i = 0; i < H; ++i)
                          for (std::size_t j = 0; j < W; ++j) {
                            T gx = g[(i * W + j) * 2 + 0];
                            T gy = g[(i * W + j) * 2 + 1];
                            gt[0] += gx * xs[j];
                            gt[1] += gx * ys[i];
                            gt[2] += gx;
                            gt[3] += gy * xs[j];
                            gt[4] += gy * ys[i];
                            gt[5] += gy;
                          }
                      }
                    });
}

// ---------------------------------------------------------------------------
// bilinear_sample: zero padding outside the canvas, differentiable in both
// image and grid.  Pixel coordinates that land within kLatticeSnap of an
// integer are snapped onto it, which makes identity warps reproduce the input
// exactly; real warps are unaffected (the snap is far below interpolation
// accuracy) and gradcheck conventions already exclude lattice kinks.

inline constexpr double kLatticeSnap = 1e-6;

template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& img, const Tensor<T>& grid) {
  if (img.rank() != 4) throw ShapeError("bilinear_sample expects img[B,C,H,W]");
  if (grid.rank() != 4 || grid.shape()[3] != 2)
    throw ShapeError("bilinear_sample expects grid[B,H',W',2]");
  if (img.shape()[0] != grid.shape()[0])
    throw ShapeError("bilinear_sample batch mismatch");
  std::size_t B = img.shape()[0], C = img.shape()[1], H = img.shape()[2],
              W = img.shape()[3];
  std::size_t Ho = grid.shape()[1], Wo = grid.shape()[2];

  struct Tap {
    long long x0, y0;
    T wx, wy;
  };
  std::vector<Tap> taps(B * Ho * Wo);
  const T* pg = grid.data();
  for (std::size_t n = 0; n < taps.size(); ++n) {
    T gx = pg[n * 2 + 0];
    T gy = pg[n * 2 + 1];
    T px = (gx + T(1)) * T(0.5) * static_cast<T>(W - 1);
    T py = (gy + T(1)) * T(0.5) * static_cast<T>(H - 1);
    T rx = std::nearbyint(px), ry = std::nearbyint(py);
    if (std::abs(px - rx) < T(kLatticeSnap)) px = rx;
    if (std::abs(py - ry) < T(kLatticeSnap)) py = ry;
    T fx = std::floor(px), fy = std::floor(py);
    taps[n] = {static_cast<long long>(fx), static_cast<long long>(fy), px - fx,
               py - fy};
  }

  auto pick = [&](const T* plane, long long y, long long x) -> T {
    if (y < 0 || y >= static_cast<long long>(H) || x < 0 ||
        x >= static_cast<long long>(W))
      return T(0);
    return plane[y * W + x];
  };

  std::vector<T> out(B * C * Ho * Wo);
  const T* pi = img.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = pi + (b * C + c) * H * W;
      T* dst = out.data() + (b * C + c) * Ho * Wo;
      const Tap* tb = taps.data() + b * Ho * Wo;
      for (std::size_t p = 0; p < Ho * Wo; ++p) {
        const Tap& tp = tb[p];
        T v00 = pick(plane, tp.y0, tp.x0);
        T v01 = pick(plane, tp.y0, tp.x0 + 1);
        T v10 = pick(plane, tp.y0 + 1, tp.x0);
        T v11 = pick(plane, tp.y0 + 1, tp.x0 + 1);
        T top = v00 + tp.wx * (v01 - v00);
        T bot = v10 + tp.wx * (v11 - v10);
        dst[p] = top + tp.wy * (bot - top);
      }
    }

  return make_op<T>(
      "bilinear_sample", {B, C, Ho, Wo}, std::move(out), {img, grid},
      [B, C, H, W, Ho, Wo, taps = std::move(taps)](Node<T>& self) {
        auto& ni = *self.parents[0];
        auto& ng = *self.parents[1];
        const T* g = self.grad.data();
        bool want_img = ni.requires_grad;
        bool want_grid = ng.requires_grad;
        if (want_img) ni.ensure_grad();
        if (want_grid) ng.ensure_grad();
        auto inb = [&](long long y, long long x) {
          return y >= 0 && y < static_cast<long long>(H) && x >= 0 &&
                 x < static_cast<long long>(W);
        };
        for (std::size_t b = 0; b < B; ++b) {
          const Tap* tb = taps.data() + b * Ho * Wo;
          for (std::size_t c = 0; c < C; ++c) {
            const T* plane = ni.value.data() + (b * C + c) * H * W;
            T* gplane = want_img ? ni.grad.data() + (b * C + c) * H * W : nullptr;
            const T* grow = g + (b * C + c) * Ho * Wo;
            for (std::size_t p = 0; p < Ho * Wo; ++p) {
              T gv = grow[p];
              if (gv == T(0)) continue;
              const Tap& tp = tb[p];
              T wx = tp.wx, wy = tp.wy;
              long long x0 = tp.x0, y0 = tp.y0;
              T v00 = inb(y0, x0) ? plane[y0 * W + x0] : T(0);
              T v01 = inb(y0, x0 + 1) ? plane[y0 * W + x0 + 1] : T(0);
              T v10 = inb(y0 + 1, x0) ? plane[(y0 + 1) * W + x0] : T(0);
              T v11 = inb(y0 + 1, x0 + 1) ? plane[(y0 + 1) * W + x0 + 1] : T(0);
              if (gplane) {
                if (inb(y0, x0)) gplane[y0 * W + x0] += gv * (T(1) - wx) * (T(1) - wy);
                if (inb(y0, x0 + 1)) gplane[y0 * W + x0 + 1] += gv * wx * (T(1) - wy);
                if (inb(y0 + 1, x0)) gplane[(y0 + 1) * W + x0] += gv * (T(1) - wx) * wy;
                if (inb(y0 + 1, x0 + 1)) gplane[(y0 + 1) * W + x0 + 1] += gv * wx * wy;
              }
              if (want_grid) {
                T dpx = (T(1) - wy) * (v01 - v00) + wy * (v11 - v10);
                T dpy = (T(1) - wx) * (v10 - v00) + wx * (v11 - v01);
                ng.grad[(b * Ho * Wo + p) * 2 + 0] +=
                    gv * dpx * T(0.5) * static_cast<T>(W - 1);
                ng.grad[(b * Ho * Wo + p) * 2 + 1] +=
                    gv * dpy * T(0.5) * static_cast<T>(H - 1);
              }
            }
          }
        }
      });
}

// Convenience: warp img by theta onto an H x W output canvas.
template <class T>
Tensor<T> warp_affine(const Tensor<T>& img, const AffineParamsT<T>& theta,
                      std::size_t H, std::size_t W) {
  return bilinear_sample(img, affine_grid(theta, H, W));
}

// ---------------------------------------------------------------------------
// invert_affine: theta^-1 with linear block A^-1 and translation -A^-1 t.
// Blocks with |det| < kDetMin are regularized by adding kAffineLambda * I
// before inversion; `regularized` (when given) reports whether any batch
// element took that path.

inline constexpr double kDetMin = 1e-4;
inline constexpr double kAffineLambda = 1e-4;

template <class T>
AffineParamsT<T> invert_affine(const AffineParamsT<T>& params,
                               bool* regularized = nullptr) {
  const Tensor<T>& theta = params.theta;
  if (theta.rank() != 3 || theta.shape()[1] != 2 || theta.shape()[2] != 3)
    throw ShapeError("invert_affine expects theta[B,2,3]");
  std::size_t B = theta.shape()[0];
  std::vector<T> out(B * 6);
  std::vector<T> effective(B * 6);  // theta with regularization applied
  bool any_reg = false;
  const T* t = theta.data();
  for (std::size_t b = 0; b < B; ++b) {
    T a = t[b * 6 + 0], bb = t[b * 6 + 1], tx = t[b * 6 + 2];
    T c = t[b * 6 + 3], d = t[b * 6 + 4], ty = t[b * 6 + 5];
    T det = a * d - bb * c;
    if (std::abs(det) < T(kDetMin)) {
      a += T(kAffineLambda);
      d += T(kAffineLambda);
      det = a * d - bb * c;
      any_reg = true;
      if (std::abs(det) < T(kDetMin)) {  // shear-degenerate; push harder
        a += T(0.01);
        d += T(0.01);
        det = a * d - bb * c;
      }
    }
    T ia = d / det, ib = -bb / det, ic = -c / det, id = a / det;
    effective[b * 6 + 0] = a;
    effective[b * 6 + 1] = bb;
    effective[b * 6 + 2] = tx;
    effective[b * 6 + 3] = c;
    effective[b * 6 + 4] = d;
    effective[b * 6 + 5] = ty;
    out[b * 6 + 0] = ia;
    out[b * 6 + 1] = ib;
    out[b * 6 + 2] = -(ia * tx + ib * ty);
    out[b * 6 + 3] = ic;
    out[b * 6 + 4] = id;
    out[b * 6 + 5] = -(ic * tx + id * ty);
  }
  if (regularized) *regularized = any_reg;

  Tensor<T> inv = make_op<T>(
      "invert_affine", {B, 2, 3}, std::move(out), {theta},
      [B, effective = std::move(effective)](Node<T>& self) {
        auto& nt = *self.parents[0];
        if (!nt.requires_grad) return;
        nt.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const T* e = effective.data() + b * 6;
          const T* o = self.value.data() + b * 6;
          const T* g = self.grad.data() + b * 6;
          // B = A_eff^-1, u = -B t; G split into 2x2 part and translation.
          T B00 = o[0], B01 = o[1], B10 = o[3], B11 = o[4];
          T tx = e[2], ty = e[5];
          T G00 = g[0], G01 = g[1], G10 = g[3], G11 = g[4];
          T gu0 = g[2], gu1 = g[5];
          // dL/dA = -B^T G B^T + (B^T g_u)(B t)^T
          T BT00 = B00, BT01 = B10, BT10 = B01, BT11 = B11;
          auto mm2 = [](T a00, T a01, T a10, T a11, T b00, T b01, T b10,
                        T b11, T* r) {
            r[0] = a00 * b00 + a01 * b10;
            r[1] = a00 * b01 + a01 * b11;
            r[2] = a10 * b00 + a11 * b10;
            r[3] = a10 * b01 + a11 * b11;
          };
          T GB[4];
          mm2(G00, G01, G10, G11, BT00, BT01, BT10, BT11, GB);
          T dA[4];
          mm2(BT00, BT01, BT10, BT11, GB[0], GB[1], GB[2], GB[3], dA);
          for (T& x : dA) x = -x;
          T Btg0 = BT00 * gu0 + BT01 * gu1;
          T Btg1 = BT10 * gu0 + BT11 * gu1;
          T Bt0 = B00 * tx + B01 * ty;
          T Bt1 = B10 * tx + B11 * ty;
          dA[0] += Btg0 * Bt0;
          dA[1] += Btg0 * Bt1;
          dA[2] += Btg1 * Bt0;
          dA[3] += Btg1 * Bt1;
          // dL/dt = -B^T g_u
          T* gt = nt.grad.data() + b * 6;
          gt[0] += dA[0];
          gt[1] += dA[1];
          gt[2] += -Btg0;
          gt[3] += dA[2];
          gt[4] += dA[3];
          gt[5] += -Btg1;
        }
      });
  return {inv};
}

// Composition (apply `second`, then `first`): [A1 t1] * [A2 t2].
template <class T>
AffineParamsT<T> compose_affine(const AffineParamsT<T>& first,
                                const AffineParamsT<T>& second) {
  std::size_t B = first.theta.shape()[0];
  const T* p1 = first.theta.data();
  const T* p2 = second.theta.data();
  std::vector<T> out(B * 6);
  for (std::size_t b = 0; b < B; ++b) {
    const T* a = p1 + b * 6;
    const T* c = p2 + b * 6;
    out[b * 6 + 0] = a[0] * c[0] + a[1] * c[3];
    out[b * 6 + 1] = a[0] * c[1] + a[1] * c[4];
    out[b * 6 + 2] = a[0] * c[2] + a[1] * c[5] + a[2];
    out[b * 6 + 3] = a[3] * c[0] + a[4] * c[3];
    out[b * 6 + 4] = a[3] * c[1] + a[4] * c[4];
    out[b * 6 + 5] = a[3] * c[2] + a[4] * c[5] + a[5];
  }
  return {Tensor<T>::from({B, 2, 3}, std::move(out))};
}

// ---------------------------------------------------------------------------
// center_of_mass: intensity-weighted mean pixel coordinate per image.
// Zero-mass images report the canvas center with mass 0.

template <class T>
std::vector<CenterOfMass> center_of_mass(const Tensor<T>& img) {
  if (img.rank() != 4)
    throw ShapeError("center_of_mass expects img[B,C,H,W]");
  std::size_t B = img.shape()[0], C = img.shape()[1], H = img.shape()[2],
              W = img.shape()[3];
  std::vector<CenterOfMass> result(B);
  const T* p = img.data();
  for (std::size_t b = 0; b < B; ++b) {
    double sh = 0.0, sv = 0.0, mass = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = p + (b * C + c) * H * W;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double m = static_cast<double>(plane[i * W + j]);
          mass += m;
          sh += m * static_cast<double>(j);
          sv += m * static_cast<double>(i);
        }
    }
    if (mass > 0.0)
      result[b] = {sh / mass, sv / mass, mass};
    else
      result[b] = {(W - 1) / 2.0, (H - 1) / 2.0, 0.0};
  }
  return result;
}

// ---------------------------------------------------------------------------
// color_apply: per pixel, output channels = M * input channels.

template <class T>
Tensor<T> color_apply(const Tensor<T>& m, const Tensor<T>& img) {
  if (m.rank() != 3 || m.shape()[1] != 3 || m.shape()[2] != 3)
    throw ShapeError("color_apply expects m[B,3,3]");
  if (img.rank() != 4 || img.shape()[1] != 3)
    throw ShapeError("color_apply expects img[B,3,H,W]");
  if (m.shape()[0] != img.shape()[0])
    throw ShapeError("color_apply batch mismatch");
  std::size_t B = img.shape()[0], H = img.shape()[2], W = img.shape()[3];
  std::size_t hw = H * W;
  std::vector<T> out(B * 3 * hw);
  const T* pm = m.data();
  const T* pi = img.data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* mb = pm + b * 9;
    const T* ib = pi + b * 3 * hw;
    T* ob = out.data() + b * 3 * hw;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < hw; ++p)
        ob[c * hw + p] = mb[c * 3 + 0] * ib[0 * hw + p] +
                         mb[c * 3 + 1] * ib[1 * hw + p] +
                         mb[c * 3 + 2] * ib[2 * hw + p];
  }
  return make_op<T>(
      "color_apply", img.shape(), std::move(out), {m, img},
      [B, hw](Node<T>& self) {
        auto& nm = *self.parents[0];
        auto& ni = *self.parents[1];
        const T* g = self.grad.data();
        if (nm.requires_grad) nm.ensure_grad();
        if (ni.requires_grad) ni.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const T* gb = g + b * 3 * hw;
          const T* ib = ni.value.data() + b * 3 * hw;
          const T* mb = nm.value.data() + b * 9;
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < 3; ++k) {
              if (nm.requires_grad) {
                T acc = T(0);
                for (std::size_t p = 0; p < hw; ++p)
                  acc += gb[c * hw + p] * ib[k * hw + p];
                nm.grad[b * 9 + c * 3 + k] += acc;
              }
              if (ni.requires_grad) {
                T mck = mb[c * 3 + k];
                if (mck != T(0)) {
                  T* gi = ni.grad.data() + b * 3 * hw + k * hw;
                  for (std::size_t p = 0; p < hw; ++p)
                    gi[p] += mck * gb[c * hw + p];
                }
              }
            }
        }
      });
}

template <class T>
Tensor<T> color_apply(const ColorMatrixT<T>& m, const Tensor<T>& img) {
  return color_apply(m.m, img);
}

// ---------------------------------------------------------------------------
// color_invert: plain 3x3 inverse when well conditioned, Tikhonov
// pseudo-inverse (M^T M + lambda I)^-1 M^T otherwise.  Always defined.

inline constexpr double kColorCondMax = 1e4;
inline constexpr double kColorLambda = 1e-4;

namespace detail {

// r = a * b for row-major 3x3
template <class T>
void mm3(const T* a, const T* b, T* r) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      T acc = T(0);
      for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = acc;
    }
}

template <class T>
void transpose3(const T* a, T* r) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i * 3 + j] = a[j * 3 + i];
}

// Adjugate-based inverse; returns det.
template <class T>
T inv3(const T* m, T* r) {
  T c00 = m[4] * m[8] - m[5] * m[7];
  T c01 = m[5] * m[6] - m[3] * m[8];
  T c02 = m[3] * m[7] - m[4] * m[6];
  T det = m[0] * c00 + m[1] * c01 + m[2] * c02;
  if (det == T(0)) return det;
  T inv_det = T(1) / det;
  r[0] = c00 * inv_det;
  r[1] = (m[2] * m[7] - m[1] * m[8]) * inv_det;
  r[2] = (m[1] * m[5] - m[2] * m[4]) * inv_det;
  r[3] = c01 * inv_det;
  r[4] = (m[0] * m[8] - m[2] * m[6]) * inv_det;
  r[5] = (m[2] * m[3] - m[0] * m[5]) * inv_det;
  r[6] = c02 * inv_det;
  r[7] = (m[1] * m[6] - m[0] * m[7]) * inv_det;
  r[8] = (m[0] * m[4] - m[1] * m[3]) * inv_det;
  return det;
}

template <class T>
T frob3(const T* m) {
  T s = T(0);
  for (int i = 0; i < 9; ++i) s += m[i] * m[i];
  return std::sqrt(s);
}

}  // namespace detail

template <class T>
Tensor<T> color_invert(const Tensor<T>& m) {
  if (m.rank() != 3 || m.shape()[1] != 3 || m.shape()[2] != 3)
    throw ShapeError("color_invert expects m[B,3,3]");
  std::size_t B = m.shape()[0];
  std::vector<T> out(B * 9);
  std::vector<T> pbuf(B * 9);          // P = (M^T M + lambda I)^-1 per reg row
  std::vector<std::uint8_t> reg(B, 0);
  const T* pm = m.data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* mb = pm + b * 9;
    T inv[9];
    T det = detail::inv3(mb, inv);
    bool bad = det == T(0);
    if (!bad) {
      T cond = detail::frob3(mb) * detail::frob3(inv);
      bad = !(cond < T(kColorCondMax));
    }
    if (!bad) {
      std::copy_n(inv, 9, out.data() + b * 9);
    } else {
      reg[b] = 1;
      T mt[9], mtm[9], p[9];
      detail::transpose3(mb, mt);
      detail::mm3(mt, mb, mtm);
      for (int i = 0; i < 3; ++i) mtm[i * 3 + i] += T(kColorLambda);
      detail::inv3(mtm, p);
      std::copy_n(p, 9, pbuf.data() + b * 9);
      T r[9];
      detail::mm3(p, mt, r);
      std::copy_n(r, 9, out.data() + b * 9);
    }
  }
  return make_op<T>(
      "color_invert", {B, 3, 3}, std::move(out), {m},
      [B, pbuf = std::move(pbuf), reg = std::move(reg)](Node<T>& self) {
        auto& nm = *self.parents[0];
        if (!nm.requires_grad) return;
        nm.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const T* G = self.grad.data() + b * 9;
          const T* Bv = self.value.data() + b * 9;
          const T* M = nm.value.data() + b * 9;
          T dM[9];
          if (!reg[b]) {
            // dL/dM = -B^T G B^T
            T Bt[9], GBt[9];
            detail::transpose3(Bv, Bt);
            detail::mm3(G, Bt, GBt);
            detail::mm3(Bt, GBt, dM);
            for (T& x : dM) x = -x;
          } else {
            // B = P M^T:  dL/dM = G^T P - M P M^T G^T P - M P G M P
            const T* P = pbuf.data() + b * 9;
            T Gt[9], t1[9], t2[9], t3[9];
            detail::transpose3(G, Gt);
            detail::mm3(Gt, P, dM);  // G^T P
            T MP[9];
            detail::mm3(M, P, MP);
            T Mt[9];
            detail::transpose3(M, Mt);
            detail::mm3(MP, Mt, t1);
            detail::mm3(t1, Gt, t2);
            detail::mm3(t2, P, t3);  // M P M^T G^T P
            for (int i = 0; i < 9; ++i) dM[i] -= t3[i];
            detail::mm3(MP, G, t1);
            detail::mm3(t1, M, t2);
            detail::mm3(t2, P, t3);  // M P G M P
            for (int i = 0; i < 9; ++i) dM[i] -= t3[i];
          }
          for (int i = 0; i < 9; ++i) nm.grad[b * 9 + i] += dM[i];
        }
      });
}

template <class T>
Tensor<T> color_invert(const ColorMatrixT<T>& m) {
  return color_invert(m.m);
}

// ---------------------------------------------------------------------------
// row_stochastic_parameterize: row-wise softmax of logits[B,3,3]; rows are
// nonnegative and sum to 1 by construction.

template <class T>
ColorMatrixT<T> row_stochastic_parameterize(const Tensor<T>& logits) {
  if (logits.rank() != 3 || logits.shape()[1] != 3 || logits.shape()[2] != 3)
    throw ShapeError("row_stochastic_parameterize expects logits[B,3,3]");
  std::size_t B = logits.shape()[0];
  Tensor<T> flat = reshape(logits, {B * 3, 3});
  Tensor<T> sm = softmax(flat);
  return {reshape(sm, {B, 3, 3})};
}

}  // namespace ace
