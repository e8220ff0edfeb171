#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "speednet/tensor.hpp"

namespace speednet {

using EMat =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul: expected 2-D operands, got " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<real> out(static_cast<size_t>(m * n));
  {
    ECMap A(a.values().data(), m, k);
    ECMap B(b.values().data(), k, n);
    EMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  NodePtr an = a.node(), bn = b.node();
  auto node = detail::make_node(
      Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](TensorNode& self) {
        ECMap G(self.grad.data(), m, n);
        if (an->requires_grad) {
          an->ensure_grad();
          EMap GA(an->grad.data(), m, k);
          ECMap B(bn->value.data(), k, n);
          GA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          EMap GB(bn->grad.data(), k, n);
          ECMap A(an->value.data(), m, k);
          GB.noalias() += A.transpose() * G;
        }
      });
  return Tensor(std::move(node));
}

inline Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: expected 2-D, got " +
                                shape_str(a.shape()));
  const int64_t m = a.shape()[0], n = a.shape()[1];
  std::vector<real> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a.at(i * n + j);
  NodePtr an = a.node();
  auto node = detail::make_node(Shape{n, m}, std::move(out), {an},
                                [an, m, n](TensorNode& self) {
                                  an->ensure_grad();
                                  for (int64_t i = 0; i < m; ++i)
                                    for (int64_t j = 0; j < n; ++j)
                                      an->grad[i * n + j] += self.grad[j * m + i];
                                });
  return Tensor(std::move(node));
}

inline Tensor relu(const Tensor& a) {
  std::vector<real> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0 ? a.at(i) : real(0);
  NodePtr an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an},
                                [an](TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    if (an->value[i] > 0) an->grad[i] += self.grad[i];
                                });
  return Tensor(std::move(node));
}

// Row-wise softmax over the trailing axis, max-subtracted for stability.
inline Tensor softmax(const Tensor& a) {
  const Shape& s = a.shape();
  const int64_t d = s.back();
  const int64_t rows = a.numel() / d;
  std::vector<real> out(a.values().size());
  for (int64_t r = 0; r < rows; ++r) {
    const real* x = a.values().data() + r * d;
    real* y = out.data() + r * d;
    real mx = x[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    real z = 0;
    for (int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int64_t j = 0; j < d; ++j) y[j] /= z;
  }
  NodePtr an = a.node();
  auto node = detail::make_node(
      s, std::move(out), {an}, [an, rows, d](TensorNode& self) {
        an->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const real* y = self.value.data() + r * d;
          const real* g = self.grad.data() + r * d;
          real dot = 0;
          for (int64_t j = 0; j < d; ++j) dot += y[j] * g[j];
          real* ga = an->grad.data() + r * d;
          for (int64_t j = 0; j < d; ++j) ga[j] += y[j] * (g[j] - dot);
        }
      });
  return Tensor(std::move(node));
}

// Affine map over the trailing axis. Accepts [in] or [...xin]; leading axes
// are treated as a flat batch.
inline Tensor linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  if (weight.shape().size() != 2)
    throw std::invalid_argument("linear: weight must be 2-D");
  const int64_t in = weight.shape()[0], out_dim = weight.shape()[1];
  if (input.shape().back() != in)
    throw std::invalid_argument("linear: trailing extent " +
                                shape_str(input.shape()) + " != weight in " +
                                std::to_string(in));
  if (bias.shape() != Shape{out_dim})
    throw std::invalid_argument("linear: bias shape mismatch");
  const int64_t rows = input.numel() / in;
  std::vector<real> out(static_cast<size_t>(rows * out_dim));
  {
    ECMap X(input.values().data(), rows, in);
    ECMap W(weight.values().data(), in, out_dim);
    EMap Y(out.data(), rows, out_dim);
    Y.noalias() = X * W;
    Y.rowwise() += ECMap(bias.values().data(), 1, out_dim).row(0);
  }
  Shape oshape(input.shape());
  oshape.back() = out_dim;
  NodePtr xn = input.node(), wn = weight.node(), bn = bias.node();
  auto node = detail::make_node(
      std::move(oshape), std::move(out), {xn, wn, bn},
      [xn, wn, bn, rows, in, out_dim](TensorNode& self) {
        ECMap G(self.grad.data(), rows, out_dim);
        if (xn->requires_grad) {
          xn->ensure_grad();
          EMap GX(xn->grad.data(), rows, in);
          ECMap W(wn->value.data(), in, out_dim);
          GX.noalias() += G * W.transpose();
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          EMap GW(wn->grad.data(), in, out_dim);
          ECMap X(xn->value.data(), rows, in);
          GW.noalias() += X.transpose() * G;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          EMap GB(bn->grad.data(), 1, out_dim);
          GB.noalias() += G.colwise().sum();
        }
      });
  return Tensor(std::move(node));
}

// Per-token normalization over the trailing axis, then elementwise affine.
inline Tensor layer_norm(const Tensor& input, const Tensor& gain,
                         const Tensor& shift, real eps = real(1e-5)) {
  const int64_t d = input.shape().back();
  if (d < 2) throw std::invalid_argument("layer_norm: trailing extent must be >= 2");
  if (eps <= 0) throw std::invalid_argument("layer_norm: eps <= 0");
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d})
    throw std::invalid_argument("layer_norm: gain/shift shape mismatch");
  const int64_t rows = input.numel() / d;
  std::vector<real> out(input.values().size());
  std::vector<real> xhat(input.values().size());
  std::vector<real> invstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const real* x = input.values().data() + r * d;
    real mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<real>(d);
    real var = 0;
    for (int64_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<real>(d);
    const real is = real(1) / std::sqrt(var + eps);
    invstd[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      const real h = (x[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.at(j) + shift.at(j);
    }
  }
  NodePtr xn = input.node(), gn = gain.node(), sn = shift.node();
  auto node = detail::make_node(
      input.shape(), std::move(out), {xn, gn, sn},
      [xn, gn, sn, rows, d, xhat = std::move(xhat),
       invstd = std::move(invstd)](TensorNode& self) {
        if (gn->requires_grad) gn->ensure_grad();
        if (sn->requires_grad) sn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const real* g = self.grad.data() + r * d;
          const real* h = xhat.data() + r * d;
          if (gn->requires_grad)
            for (int64_t j = 0; j < d; ++j) gn->grad[j] += g[j] * h[j];
          if (sn->requires_grad)
            for (int64_t j = 0; j < d; ++j) sn->grad[j] += g[j];
          if (xn->requires_grad) {
            // dx = invstd * (gy - mean(gy) - xhat * mean(gy*xhat)), gy = g*gain
            real m1 = 0, m2 = 0;
            for (int64_t j = 0; j < d; ++j) {
              const real gy = g[j] * gn->value[j];
              m1 += gy;
              m2 += gy * h[j];
            }
            m1 /= static_cast<real>(d);
            m2 /= static_cast<real>(d);
            const real is = invstd[static_cast<size_t>(r)];
            real* gx = xn->grad.data() + r * d;
            for (int64_t j = 0; j < d; ++j)
              gx[j] += is * (g[j] * gn->value[j] - m1 - h[j] * m2);
          }
        }
      });
  return Tensor(std::move(node));
}

inline Tensor col_slice(const Tensor& a, int64_t c0, int64_t c1) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("col_slice: expected 2-D input");
  const int64_t rows = a.shape()[0], cols = a.shape()[1];
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw std::invalid_argument("col_slice: bad range");
  const int64_t w = c1 - c0;
  std::vector<real> out(static_cast<size_t>(rows * w));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < w; ++j) out[r * w + j] = a.at(r * cols + c0 + j);
  NodePtr an = a.node();
  auto node = detail::make_node(Shape{rows, w}, std::move(out), {an},
                                [an, rows, cols, c0, w](TensorNode& self) {
                                  an->ensure_grad();
                                  for (int64_t r = 0; r < rows; ++r)
                                    for (int64_t j = 0; j < w; ++j)
                                      an->grad[r * cols + c0 + j] +=
                                          self.grad[r * w + j];
                                });
  return Tensor(std::move(node));
}

inline Tensor col_concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("col_concat: empty input");
  const int64_t rows = parts[0].shape()[0];
  int64_t cols = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != rows)
      throw std::invalid_argument("col_concat: row mismatch");
    cols += p.shape()[1];
    parents.push_back(p.node());
  }
  std::vector<real> out(static_cast<size_t>(rows * cols));
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p.shape()[1];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < w; ++j) out[r * cols + off + j] = p.at(r * w + j);
    off += w;
  }
  auto ps = parents;
  auto node = detail::make_node(
      Shape{rows, cols}, std::move(out), std::move(parents),
      [ps, rows, cols](TensorNode& self) {
        int64_t off = 0;
        for (const auto& p : ps) {
          const int64_t w = p->shape[1];
          if (p->requires_grad) {
            p->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t j = 0; j < w; ++j)
                p->grad[r * w + j] += self.grad[r * cols + off + j];
          }
          off += w;
        }
      });
  return Tensor(std::move(node));
}

// Column sums of a [N, D] matrix -> [D].
inline Tensor sum_rows(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("sum_rows: expected 2-D input");
  const int64_t rows = a.shape()[0], d = a.shape()[1];
  std::vector<real> out(static_cast<size_t>(d), real(0));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[j] += a.at(r * d + j);
  NodePtr an = a.node();
  auto node = detail::make_node(Shape{d}, std::move(out), {an},
                                [an, rows, d](TensorNode& self) {
                                  an->ensure_grad();
                                  for (int64_t r = 0; r < rows; ++r)
                                    for (int64_t j = 0; j < d; ++j)
                                      an->grad[r * d + j] += self.grad[j];
                                });
  return Tensor(std::move(node));
}

struct Conv2dParams {
  Tensor kernel;  // [out_ch, in_ch, kh, kw]
  Tensor bias;    // [out_ch]
  std::array<int64_t, 2> stride{1, 1};
  std::array<int64_t, 2> padding{0, 0};
};

struct Conv3dParams {
  Tensor kernel;  // [out_ch, in_ch, d, k, k]
  Tensor bias;    // [out_ch]
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> padding{0, 0, 0};
};

namespace detail {

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t pad, int64_t stride,
                               const char* axis) {
  const int64_t o = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || o < 1)
    throw std::invalid_argument(std::string("conv: kernel exceeds padded input on ") +
                                axis + " axis");
  return o;
}

// cols is [in_ch*kd*kh*kw, T'*H'*W']; zero padding contributes zero rows.
inline void im2col_3d(const real* x, int64_t C, int64_t T, int64_t H, int64_t W,
                      int64_t kd, int64_t kh, int64_t kw,
                      const std::array<int64_t, 3>& stride,
                      const std::array<int64_t, 3>& pad, int64_t To, int64_t Ho,
                      int64_t Wo, real* cols) {
  const int64_t P = To * Ho * Wo;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t dt = 0; dt < kd; ++dt)
      for (int64_t dh = 0; dh < kh; ++dh)
        for (int64_t dw = 0; dw < kw; ++dw, ++row) {
          real* dst = cols + row * P;
          int64_t p = 0;
          for (int64_t t = 0; t < To; ++t) {
            const int64_t it = t * stride[0] - pad[0] + dt;
            const bool tin = it >= 0 && it < T;
            for (int64_t i = 0; i < Ho; ++i) {
              const int64_t ih = i * stride[1] - pad[1] + dh;
              const bool hin = tin && ih >= 0 && ih < H;
              for (int64_t j = 0; j < Wo; ++j, ++p) {
                const int64_t iw = j * stride[2] - pad[2] + dw;
                dst[p] = (hin && iw >= 0 && iw < W)
                             ? x[((c * T + it) * H + ih) * W + iw]
                             : real(0);
              }
            }
          }
        }
}

inline void col2im_3d(const real* cols, int64_t C, int64_t T, int64_t H,
                      int64_t W, int64_t kd, int64_t kh, int64_t kw,
                      const std::array<int64_t, 3>& stride,
                      const std::array<int64_t, 3>& pad, int64_t To, int64_t Ho,
                      int64_t Wo, real* gx) {
  const int64_t P = To * Ho * Wo;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t dt = 0; dt < kd; ++dt)
      for (int64_t dh = 0; dh < kh; ++dh)
        for (int64_t dw = 0; dw < kw; ++dw, ++row) {
          const real* src = cols + row * P;
          int64_t p = 0;
          for (int64_t t = 0; t < To; ++t) {
            const int64_t it = t * stride[0] - pad[0] + dt;
            const bool tin = it >= 0 && it < T;
            for (int64_t i = 0; i < Ho; ++i) {
              const int64_t ih = i * stride[1] - pad[1] + dh;
              const bool hin = tin && ih >= 0 && ih < H;
              for (int64_t j = 0; j < Wo; ++j, ++p) {
                const int64_t iw = j * stride[2] - pad[2] + dw;
                if (hin && iw >= 0 && iw < W)
                  gx[((c * T + it) * H + ih) * W + iw] += src[p];
              }
            }
          }
        }
}

}  // namespace detail

inline Tensor conv3d(const Tensor& input, const Conv3dParams& params) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("conv3d: expected [C,T,H,W] input, got " +
                                shape_str(input.shape()));
  if (params.kernel.shape().size() != 5)
    throw std::invalid_argument("conv3d: expected [oc,ic,d,k,k] kernel");
  const int64_t C = input.shape()[0], T = input.shape()[1], H = input.shape()[2],
                W = input.shape()[3];
  const auto& ks = params.kernel.shape();
  const int64_t OC = ks[0], IC = ks[1], kd = ks[2], kh = ks[3], kw = ks[4];
  if (IC != C)
    throw std::invalid_argument("conv3d: input has " + std::to_string(C) +
                                " channels, kernel expects " + std::to_string(IC));
  if (params.bias.shape() != Shape{OC})
    throw std::invalid_argument("conv3d: bias shape mismatch");
  const auto& st = params.stride;
  const auto& pd = params.padding;
  const int64_t To = detail::conv_out_extent(T, kd, pd[0], st[0], "temporal");
  const int64_t Ho = detail::conv_out_extent(H, kh, pd[1], st[1], "height");
  const int64_t Wo = detail::conv_out_extent(W, kw, pd[2], st[2], "width");
  const int64_t K = C * kd * kh * kw;
  const int64_t P = To * Ho * Wo;

  std::vector<real> cols(static_cast<size_t>(K * P));
  detail::im2col_3d(input.values().data(), C, T, H, W, kd, kh, kw, st, pd, To,
                    Ho, Wo, cols.data());
  std::vector<real> out(static_cast<size_t>(OC * P));
  {
    ECMap Km(params.kernel.values().data(), OC, K);
    ECMap Cm(cols.data(), K, P);
    EMap Om(out.data(), OC, P);
    Om.noalias() = Km * Cm;
    Om.colwise() +=
        Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>(
            params.bias.values().data(), OC);
  }
  cols.clear();
  cols.shrink_to_fit();

  NodePtr xn = input.node(), kn = params.kernel.node(), bn = params.bias.node();
  auto node = detail::make_node(
      Shape{OC, To, Ho, Wo}, std::move(out), {xn, kn, bn},
      [xn, kn, bn, C, T, H, W, OC, kd, kh, kw, st, pd, To, Ho, Wo, K,
       P](TensorNode& self) {
        // im2col is recomputed here rather than cached across the forward pass.
        std::vector<real> cols(static_cast<size_t>(K * P));
        detail::im2col_3d(xn->value.data(), C, T, H, W, kd, kh, kw, st, pd, To,
                          Ho, Wo, cols.data());
        ECMap G(self.grad.data(), OC, P);
        if (kn->requires_grad) {
          kn->ensure_grad();
          EMap GK(kn->grad.data(), OC, K);
          ECMap Cm(cols.data(), K, P);
          GK.noalias() += G * Cm.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>> GB(bn->grad.data(), OC);
          GB.noalias() += G.rowwise().sum();
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<real> gcols(static_cast<size_t>(K * P));
          EMap GC(gcols.data(), K, P);
          ECMap Km(kn->value.data(), OC, K);
          GC.noalias() = Km.transpose() * G;
          detail::col2im_3d(gcols.data(), C, T, H, W, kd, kh, kw, st, pd, To,
                            Ho, Wo, xn->grad.data());
        }
      });
  return Tensor(std::move(node));
}

// 2-D convolution is the depth-1 case of the 3-D path.
inline Tensor conv2d(const Tensor& input, const Conv2dParams& params) {
  if (input.shape().size() != 3)
    throw std::invalid_argument("conv2d: expected [C,H,W] input, got " +
                                shape_str(input.shape()));
  if (params.kernel.shape().size() != 4)
    throw std::invalid_argument("conv2d: expected [oc,ic,kh,kw] kernel");
  const auto& ks = params.kernel.shape();
  Tensor input3 = reshape(input, {input.shape()[0], 1, input.shape()[1],
                                  input.shape()[2]});
  Tensor kernel3 = reshape(params.kernel, {ks[0], ks[1], 1, ks[2], ks[3]});
  Conv3dParams p3{kernel3, params.bias,
                  {1, params.stride[0], params.stride[1]},
                  {0, params.padding[0], params.padding[1]}};
  Tensor out = conv3d(input3, p3);
  const auto& os = out.shape();
  return reshape(out, {os[0], os[2], os[3]});
}

struct Pool3dSpec {
  std::array<int64_t, 3> kernel{2, 2, 2};  // (d, k, k)
  std::array<int64_t, 3> stride{0, 0, 0};  // 0 = same as kernel
};

inline Tensor maxpool3d(const Tensor& input, const Pool3dSpec& spec) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("maxpool3d: expected [C,T,H,W] input");
  std::array<int64_t, 3> k = spec.kernel;
  std::array<int64_t, 3> st = spec.stride;
  for (int a = 0; a < 3; ++a) {
    if (k[a] < 1) throw std::invalid_argument("maxpool3d: kernel extent < 1");
    if (st[a] == 0) st[a] = k[a];
    if (st[a] != k[a])
      throw std::invalid_argument("maxpool3d: only stride == kernel supported");
  }
  const int64_t C = input.shape()[0], T = input.shape()[1], H = input.shape()[2],
                W = input.shape()[3];
  if (T % k[0] || H % k[1] || W % k[2])
    throw std::invalid_argument("maxpool3d: extents " + shape_str(input.shape()) +
                                " not divisible by kernel (" + std::to_string(k[0]) +
                                "," + std::to_string(k[1]) + "," +
                                std::to_string(k[2]) + ")");
  const int64_t To = T / k[0], Ho = H / k[1], Wo = W / k[2];
  std::vector<real> out(static_cast<size_t>(C * To * Ho * Wo));
  std::vector<int64_t> arg(out.size());
  const real* x = input.values().data();
  int64_t p = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < To; ++t)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j, ++p) {
          real best = 0;
          int64_t bestIdx = -1;
          for (int64_t dt = 0; dt < k[0]; ++dt)
            for (int64_t dh = 0; dh < k[1]; ++dh)
              for (int64_t dw = 0; dw < k[2]; ++dw) {
                const int64_t idx =
                    ((c * T + t * k[0] + dt) * H + i * k[1] + dh) * W +
                    j * k[2] + dw;
                // strict > keeps ties at the lowest flat index
                if (bestIdx < 0 || x[idx] > best) {
                  best = x[idx];
                  bestIdx = idx;
                }
              }
          out[p] = best;
          arg[p] = bestIdx;
        }
  NodePtr an = input.node();
  auto node = detail::make_node(
      Shape{C, To, Ho, Wo}, std::move(out), {an},
      [an, arg = std::move(arg)](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[arg[i]] += self.grad[i];
      });
  return Tensor(std::move(node));
}

struct AttentionParams {
  int64_t num_heads = 1;
  int64_t model_dim = 0;
  Tensor wq, wk, wv, wo;  // each [dim, dim]
  Tensor bq, bk, bv, bo;  // each [dim]
};

// Scaled dot-product self-attention over [N, dim] tokens; heads are column
// blocks, scale 1/sqrt(dim/heads). No positional term here.
inline Tensor multi_head_self_attention(const Tensor& tokens,
                                        const AttentionParams& params) {
  if (tokens.shape().size() != 2)
    throw std::invalid_argument("attention: expected [N, dim] tokens");
  const int64_t dim = tokens.shape()[1];
  if (dim != params.model_dim)
    throw std::invalid_argument("attention: token dim != model_dim");
  if (params.num_heads < 1 || dim % params.num_heads)
    throw std::invalid_argument("attention: model_dim not divisible by heads");
  const int64_t hd = dim / params.num_heads;
  const real sc = real(1) / std::sqrt(static_cast<real>(hd));
  Tensor q = linear(tokens, params.wq, params.bq);
  Tensor k = linear(tokens, params.wk, params.bk);
  Tensor v = linear(tokens, params.wv, params.bv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(params.num_heads));
  for (int64_t h = 0; h < params.num_heads; ++h) {
    Tensor qh = col_slice(q, h * hd, (h + 1) * hd);
    Tensor kh = col_slice(k, h * hd, (h + 1) * hd);
    Tensor vh = col_slice(v, h * hd, (h + 1) * hd);
    Tensor att = softmax(scale(matmul(qh, transpose(kh)), sc));
    heads.push_back(matmul(att, vh));
  }
  return linear(col_concat(heads), params.wo, params.bo);
}

// Gathers non-overlapping t x h x w tubelets from [C,T,H,W] (zero-padding T up
// to a multiple of t) and projects each flattened tubelet to a dim-vector.
// Token order is row-major over (temporal, row, column) tubelet indices;
// within a tubelet the flatten order is (channel, dt, dh, dw).
inline Tensor tubelet_embed(const Tensor& clip, int64_t t, int64_t h, int64_t w,
                            int64_t dim, const Tensor& projection,
                            const Tensor& bias) {
  if (clip.shape().size() != 4)
    throw std::invalid_argument("tubelet_embed: expected [C,T,H,W] clip");
  const int64_t C = clip.shape()[0], T = clip.shape()[1], H = clip.shape()[2],
                W = clip.shape()[3];
  if (t < 1 || h < 1 || w < 1) throw std::invalid_argument("tubelet_embed: bad tubelet");
  if (H % h || W % w)
    throw std::invalid_argument("tubelet_embed: spatial extents " +
                                shape_str(clip.shape()) +
                                " not divisible by tubelet " + std::to_string(h) +
                                "x" + std::to_string(w));
  const int64_t Tp = ((T + t - 1) / t) * t;
  const int64_t nt = Tp / t, nh = H / h, nw = W / w;
  const int64_t n_tokens = nt * nh * nw;
  const int64_t flat = C * t * h * w;
  if (projection.shape() != Shape{flat, dim})
    throw std::invalid_argument("tubelet_embed: projection shape " +
                                shape_str(projection.shape()) + " != [" +
                                std::to_string(flat) + "," + std::to_string(dim) + "]");
  std::vector<real> gathered(static_cast<size_t>(n_tokens * flat), real(0));
  std::vector<int64_t> src(gathered.size(), -1);
  const real* x = clip.values().data();
  int64_t tok = 0;
  for (int64_t bt = 0; bt < nt; ++bt)
    for (int64_t bh = 0; bh < nh; ++bh)
      for (int64_t bw = 0; bw < nw; ++bw, ++tok) {
        real* row = gathered.data() + tok * flat;
        int64_t f = 0;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dt = 0; dt < t; ++dt)
            for (int64_t dh = 0; dh < h; ++dh)
              for (int64_t dw = 0; dw < w; ++dw, ++f) {
                const int64_t it = bt * t + dt;
                if (it >= T) continue;  // temporal zero pad
                const int64_t idx =
                    ((c * T + it) * H + bh * h + dh) * W + bw * w + dw;
                row[f] = x[idx];
                src[tok * flat + f] = idx;
              }
      }
  NodePtr cn = clip.node();
  auto gnode = detail::make_node(
      Shape{n_tokens, flat}, std::move(gathered), {cn},
      [cn, src = std::move(src)](TensorNode& self) {
        cn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (src[i] >= 0) cn->grad[src[i]] += self.grad[i];
      });
  return linear(Tensor(std::move(gnode)), projection, bias);
}

}  // namespace speednet
