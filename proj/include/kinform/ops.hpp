#pragma once

// Forward kernels with their reverse-mode rules.
//
// Layouts: images are [C, H, W]; length-axis maps (fusion activations) are
// [L, C] with L the embedding index and C the channel. Summation order is
// fixed in every kernel so results are bit-reproducible. There is no
// broadcasting beyond tensor-times-scalar.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "kinform/tensor.hpp"

namespace kinform {

namespace detail {

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

inline void check_finite(const std::vector<Real>& values, const char* op) {
  for (Real v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output (numeric overflow)");
  }
}

inline void probe_branch(std::uint64_t v) {
  if (BranchProbe* p = active_probe_slot()) p->mix(v);
}

/// Records `fn` when a tape is active and some defined input needs a gradient.
template <class Fn>
void record(std::initializer_list<const Tensor*> inputs, const Tensor& out, Fn&& fn) {
  Tape* tape = active_tape();
  if (tape == nullptr) return;
  std::vector<NodePtr> nodes;
  bool any = false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined()) {
      nodes.push_back(t->node_ptr());
      any = any || t->requires_grad();
    }
  }
  if (!any) return;
  out.node_ptr()->requires_grad = true;
  tape->record(std::move(nodes), out.node_ptr(), std::forward<Fn>(fn));
}

inline Tensor make(Shape shape, std::vector<Real> values, const char* op) {
  check_finite(values, op);
  return Tensor(std::move(shape), std::move(values));
}

/// Gradient buffer of `n` if it takes part in differentiation, else null.
inline Real* grad_of(const NodePtr& n) {
  if (!n || !n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

/// Output columns [first, last) whose input column ow * stride + k - pad
/// falls inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       std::size_t k, std::size_t pad) {
  const std::size_t first = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  // largest ow with ow * stride + k - pad <= in - 1
  const std::size_t top = in - 1 + pad;
  const std::size_t last = top < k ? 0 : std::min(out, (top - k) / stride + 1);
  return {first, std::max(first, last)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// [m, k] x [k, n] -> [m, n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul", "operands must be rank 2, got " +
                  shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul", "inner dimensions differ: " + shape_str(a.shape()) +
                  " x " + shape_str(b.shape()));
  std::vector<Real> out(m * n, Real(0));
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  Tensor y = detail::make({m, n}, std::move(out), "matmul");
  auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
  detail::record({&a, &b}, y, [an, bn, yn, m, k, n] {
    const Real* G = yn->grad.data();
    if (Real* ga = detail::grad_of(an)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * bn->data[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (Real* gb = detail::grad_of(bn)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const Real av = an->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
        }
    }
  });
  return y;
}

/// Fully connected layer: x [in], weight [out, in], optional bias [out] -> [out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require(weight.rank() == 2, "linear", "weight must be [out, in], got " + shape_str(weight.shape()));
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  detail::require(x.numel() == in_dim, "linear", "input has " + std::to_string(x.numel()) +
                  " values, weight expects " + std::to_string(in_dim));
  detail::require(!bias.defined() || bias.numel() == out_dim, "linear", "bias length mismatch");
  std::vector<Real> out(out_dim);
  const Real* W = weight.data().data();
  const Real* X = x.data().data();
  for (std::size_t o = 0; o < out_dim; ++o) {
    Real acc = 0;
    for (std::size_t i = 0; i < in_dim; ++i) acc += W[o * in_dim + i] * X[i];
    out[o] = bias.defined() ? acc + bias[o] : acc;
  }
  Tensor y = detail::make({out_dim}, std::move(out), "linear");
  auto xn = x.node_ptr(), wn = weight.node_ptr(), yn = y.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : detail::NodePtr();
  detail::record({&x, &weight, &bias}, y, [xn, wn, bn, yn, out_dim, in_dim] {
    const Real* G = yn->grad.data();
    if (Real* gx = detail::grad_of(xn)) {
      for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t i = 0; i < in_dim; ++i) gx[i] += wn->data[o * in_dim + i] * G[o];
    }
    if (Real* gw = detail::grad_of(wn)) {
      for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t i = 0; i < in_dim; ++i) gw[o * in_dim + i] += G[o] * xn->data[i];
    }
    if (Real* gb = detail::grad_of(bn)) {
      for (std::size_t o = 0; o < out_dim; ++o) gb[o] += G[o];
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions

/// 2-D convolution. x [C, H, W], weight [Co, C, kh, kw], optional bias [Co].
/// Output [Co, (H + 2p - kh) / s + 1, (W + 2p - kw) / s + 1].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor(),
                     std::size_t stride = 1, std::size_t pad = 1) {
  detail::require(x.rank() == 3, "conv2d", "input must be [C, H, W], got " + shape_str(x.shape()));
  detail::require(weight.rank() == 4, "conv2d", "weight must be [Co, C, kh, kw], got " +
                  shape_str(weight.shape()));
  detail::require(stride >= 1, "conv2d", "stride must be >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Co = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  detail::require(weight.dim(1) == C, "conv2d", "input has " + std::to_string(C) +
                  " channels, weight expects " + std::to_string(weight.dim(1)));
  detail::require(H + 2 * pad >= KH && W + 2 * pad >= KW, "conv2d", "kernel larger than padded input");
  detail::require(!bias.defined() || bias.numel() == Co, "conv2d", "bias length mismatch");
  const std::size_t Ho = (H + 2 * pad - KH) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - KW) / stride + 1;

  std::vector<Real> out(Co * Ho * Wo, Real(0));
  const Real* X = x.data().data();
  const Real* K = weight.data().data();
  for (std::size_t co = 0; co < Co; ++co) {
    Real* plane = out.data() + co * Ho * Wo;
    for (std::size_t ci = 0; ci < C; ++ci)
      for (std::size_t kh = 0; kh < KH; ++kh)
        for (std::size_t kw = 0; kw < KW; ++kw) {
          const Real k = K[((co * C + ci) * KH + kh) * KW + kw];
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            const Real* row = X + (ci * H + static_cast<std::size_t>(ih)) * W;
            Real* orow = plane + oh * Wo;
            const auto [ow0, ow1] = detail::valid_range(Wo, W, stride, kw, pad);
            for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += k * row[ow * stride + kw - pad];
          }
        }
    if (bias.defined()) {
      for (std::size_t i = 0; i < Ho * Wo; ++i) plane[i] += bias[co];
    }
  }
  Tensor y = detail::make({Co, Ho, Wo}, std::move(out), "conv2d");
  auto xn = x.node_ptr(), wn = weight.node_ptr(), yn = y.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : detail::NodePtr();
  detail::record({&x, &weight, &bias}, y,
                 [xn, wn, bn, yn, C, H, W, Co, KH, KW, Ho, Wo, stride, pad] {
    const Real* G = yn->grad.data();
    Real* gx = detail::grad_of(xn);
    Real* gw = detail::grad_of(wn);
    for (std::size_t co = 0; co < Co; ++co) {
      const Real* gplane = G + co * Ho * Wo;
      for (std::size_t ci = 0; ci < C; ++ci)
        for (std::size_t kh = 0; kh < KH; ++kh)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const std::size_t kidx = ((co * C + ci) * KH + kh) * KW + kw;
            const Real k = wn->data[kidx];
            Real kacc = 0;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
              if (ih < 0 || ih >= static_cast<long>(H)) continue;
              const std::size_t rowoff = (ci * H + static_cast<std::size_t>(ih)) * W;
              const auto [ow0, ow1] = detail::valid_range(Wo, W, stride, kw, pad);
              const Real* grow = gplane + oh * Wo;
              const Real* xrow = xn->data.data() + rowoff;
              for (std::size_t ow = ow0; ow < ow1; ++ow) kacc += grow[ow] * xrow[ow * stride + kw - pad];
              if (gx) {
                Real* gxrow = gx + rowoff;
                for (std::size_t ow = ow0; ow < ow1; ++ow) gxrow[ow * stride + kw - pad] += k * grow[ow];
              }
            }
            if (gw) gw[kidx] += kacc;
          }
    }
    if (Real* gb = detail::grad_of(bn)) {
      for (std::size_t co = 0; co < Co; ++co) {
        Real acc = 0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += G[co * Ho * Wo + i];
        gb[co] += acc;
      }
    }
  });
  return y;
}

/// Kernel-size-1 convolution along a length axis: a linear map over channels
/// shared by every position. x [L, Ci], weight [Co, Ci], optional bias [Co]
/// -> [L, Co].
inline Tensor conv1d_k1(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require(x.rank() == 2, "conv1d_k1", "input must be [L, C], got " + shape_str(x.shape()));
  detail::require(weight.rank() == 2, "conv1d_k1", "weight must be [Co, Ci], got " +
                  shape_str(weight.shape()));
  const std::size_t L = x.dim(0), Ci = x.dim(1), Co = weight.dim(0);
  detail::require(weight.dim(1) == Ci, "conv1d_k1", "input has " + std::to_string(Ci) +
                  " channels, weight expects " + std::to_string(weight.dim(1)));
  detail::require(!bias.defined() || bias.numel() == Co, "conv1d_k1", "bias length mismatch");
  std::vector<Real> out(L * Co);
  const Real* X = x.data().data();
  const Real* K = weight.data().data();
  for (std::size_t l = 0; l < L; ++l) {
    const Real* xrow = X + l * Ci;
    for (std::size_t o = 0; o < Co; ++o) {
      const Real* krow = K + o * Ci;
      Real acc = 0;
      for (std::size_t i = 0; i < Ci; ++i) acc += krow[i] * xrow[i];
      out[l * Co + o] = bias.defined() ? acc + bias[o] : acc;
    }
  }
  Tensor y = detail::make({L, Co}, std::move(out), "conv1d_k1");
  auto xn = x.node_ptr(), wn = weight.node_ptr(), yn = y.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : detail::NodePtr();
  detail::record({&x, &weight, &bias}, y, [xn, wn, bn, yn, L, Ci, Co] {
    const Real* G = yn->grad.data();
    Real* gx = detail::grad_of(xn);
    Real* gw = detail::grad_of(wn);
    Real* gb = detail::grad_of(bn);
    for (std::size_t l = 0; l < L; ++l) {
      const Real* xrow = xn->data.data() + l * Ci;
      for (std::size_t o = 0; o < Co; ++o) {
        const Real g = G[l * Co + o];
        if (g == Real(0)) continue;
        const Real* krow = wn->data.data() + o * Ci;
        if (gx)
          for (std::size_t i = 0; i < Ci; ++i) gx[l * Ci + i] += krow[i] * g;
        if (gw)
          for (std::size_t i = 0; i < Ci; ++i) gw[o * Ci + i] += g * xrow[i];
        if (gb) gb[o] += g;
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Element-wise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add", "shape mismatch " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y = detail::make(a.shape(), std::move(out), "add");
  auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
  detail::record({&a, &b}, y, [an, bn, yn] {
    const std::size_t n = yn->grad.size();
    if (Real* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += yn->grad[i];
    if (Real* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] += yn->grad[i];
  });
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub", "shape mismatch " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y = detail::make(a.shape(), std::move(out), "sub");
  auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
  detail::record({&a, &b}, y, [an, bn, yn] {
    const std::size_t n = yn->grad.size();
    if (Real* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += yn->grad[i];
    if (Real* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= yn->grad[i];
  });
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul", "shape mismatch " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y = detail::make(a.shape(), std::move(out), "mul");
  auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
  detail::record({&a, &b}, y, [an, bn, yn] {
    const std::size_t n = yn->grad.size();
    // a and b may alias (x .* x); each side accumulates separately.
    if (Real* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += yn->grad[i] * bn->data[i];
    if (Real* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < n; ++i) gb[i] += yn->grad[i] * an->data[i];
  });
  return y;
}

/// Tensor times a constant scalar.
inline Tensor scale(const Tensor& x, Real s) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  Tensor y = detail::make(x.shape(), std::move(out), "scale");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn, s] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < yn->grad.size(); ++i) gx[i] += yn->grad[i] * s;
  });
  return y;
}

/// x / sqrt(|x|^2 + eps), over all elements.
inline Tensor l2_normalize(const Tensor& x, Real eps = Real(1e-12)) {
  Real n2 = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) n2 += x[i] * x[i];
  const Real r = std::sqrt(n2 + eps);
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / r;
  Tensor y = detail::make(x.shape(), std::move(out), "l2_normalize");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn, r] {
    Real* gx = detail::grad_of(xn);
    if (!gx) return;
    Real dot = 0;
    for (std::size_t i = 0; i < yn->grad.size(); ++i) dot += yn->grad[i] * yn->data[i];
    for (std::size_t i = 0; i < yn->grad.size(); ++i) gx[i] += (yn->grad[i] - yn->data[i] * dot) / r;
  });
  return y;
}

inline Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.numel());
  std::uint64_t pattern = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = x[i] > Real(0);
    out[i] = on ? x[i] : Real(0);
    pattern = pattern * 31 + (on ? 1 : 2);
  }
  detail::probe_branch(pattern);
  Tensor y = detail::make(x.shape(), std::move(out), "relu");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < yn->grad.size(); ++i)
        if (xn->data[i] > Real(0)) gx[i] += yn->grad[i];
  });
  return y;
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x[i];
    if (v >= 0) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  Tensor y = detail::make(x.shape(), std::move(out), "sigmoid");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        const Real s = yn->data[i];
        gx[i] += yn->grad[i] * s * (Real(1) - s);
      }
  });
  return y;
}

/// Softmax along the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t K = x.shape().back();
  const std::size_t rows = x.numel() / K;
  std::vector<Real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = x.data().data() + r * K;
    Real* o = out.data() + r * K;
    const Real mx = *std::max_element(in, in + K);
    Real z = 0;
    for (std::size_t k = 0; k < K; ++k) {
      o[k] = std::exp(in[k] - mx);
      z += o[k];
    }
    for (std::size_t k = 0; k < K; ++k) o[k] /= z;
  }
  Tensor y = detail::make(x.shape(), std::move(out), "softmax");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn, K, rows] {
    Real* gx = detail::grad_of(xn);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* s = yn->data.data() + r * K;
      const Real* g = yn->grad.data() + r * K;
      Real dot = 0;
      for (std::size_t k = 0; k < K; ++k) dot += g[k] * s[k];
      for (std::size_t k = 0; k < K; ++k) gx[r * K + k] += s[k] * (g[k] - dot);
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

/// Mean over the length axis: [L, C] -> [C].
inline Tensor avgpool_length(const Tensor& x) {
  detail::require(x.rank() == 2, "avgpool_length", "input must be [L, C], got " + shape_str(x.shape()));
  const std::size_t L = x.dim(0), C = x.dim(1);
  std::vector<Real> out(C, Real(0));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < C; ++c) out[c] += x[l * C + c];
  for (Real& v : out) v /= static_cast<Real>(L);
  Tensor y = detail::make({C}, std::move(out), "avgpool_length");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn, L, C] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t c = 0; c < C; ++c) gx[l * C + c] += yn->grad[c] / static_cast<Real>(L);
  });
  return y;
}

inline Tensor sum(const Tensor& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  Tensor y = detail::make({1}, {acc}, "sum");
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += yn->grad[0];
  });
  return y;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape", "cannot view " +
                  shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor y(std::move(shape), std::vector<Real>(x.data().begin(), x.data().end()));
  auto xn = x.node_ptr(), yn = y.node_ptr();
  detail::record({&x}, y, [xn, yn] {
    if (Real* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < yn->grad.size(); ++i) gx[i] += yn->grad[i];
  });
  return y;
}

/// Channel-wise concatenation: [L, C1] ++ [L, C2] -> [L, C1 + C2].
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_channels",
                  "need [L, C1] and [L, C2], got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t L = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), C = C1 + C2;
  std::vector<Real> out(L * C);
  for (std::size_t l = 0; l < L; ++l) {
    std::copy_n(a.data().data() + l * C1, C1, out.data() + l * C);
    std::copy_n(b.data().data() + l * C2, C2, out.data() + l * C + C1);
  }
  Tensor y({L, C}, std::move(out));
  auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
  detail::record({&a, &b}, y, [an, bn, yn, L, C1, C2, C] {
    Real* ga = detail::grad_of(an);
    Real* gb = detail::grad_of(bn);
    for (std::size_t l = 0; l < L; ++l) {
      if (ga)
        for (std::size_t c = 0; c < C1; ++c) ga[l * C1 + c] += yn->grad[l * C + c];
      if (gb)
        for (std::size_t c = 0; c < C2; ++c) gb[l * C2 + c] += yn->grad[l * C + C1 + c];
    }
  });
  return y;
}

/// Two length-d vectors stacked as a 2-channel map [d, 2] (a in channel 0).
inline Tensor stack_channels(const Tensor& a, const Tensor& b) {
  detail::require(a.numel() == b.numel(), "stack_channels", "length mismatch " +
                  shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t d = a.numel();
  return concat_channels(reshape(a, {d, 1}), reshape(b, {d, 1}));
}

// ---------------------------------------------------------------------------
// Losses

/// Binary cross-entropy of a probability p (shape [1]) against label 0/1.
/// p is clamped to [eps, 1 - eps]; the gradient is zero where clamping bites.
inline Tensor bce(const Tensor& p, Real label, Real eps = Real(1e-12)) {
  detail::require(p.numel() == 1, "bce", "probability must be a scalar, got " + shape_str(p.shape()));
  const Real raw = p[0];
  const Real s = std::clamp(raw, eps, Real(1) - eps);
  const bool clamped = s != raw;
  detail::probe_branch(clamped ? 3 : 5);
  const Real loss = -(label * std::log(s) + (Real(1) - label) * std::log(Real(1) - s));
  Tensor y = detail::make({1}, {loss}, "bce");
  auto pn = p.node_ptr(), yn = y.node_ptr();
  detail::record({&p}, y, [pn, yn, s, label, clamped] {
    if (clamped) return;
    if (Real* gp = detail::grad_of(pn))
      gp[0] += yn->grad[0] * (-label / s + (Real(1) - label) / (Real(1) - s));
  });
  return y;
}

/// Softmax cross-entropy of logits [K] against class index `label`.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  detail::require(logits.rank() == 1, "cross_entropy", "logits must be [K], got " + shape_str(logits.shape()));
  const std::size_t K = logits.numel();
  if (label >= K) throw ShapeError("cross_entropy: label " + std::to_string(label) +
                                   " out of range for " + std::to_string(K) + " classes");
  const Real* z = logits.data().data();
  const Real mx = *std::max_element(z, z + K);
  Real sum = 0;
  for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
  const Real lse = mx + std::log(sum);
  Tensor y = detail::make({1}, {lse - z[label]}, "cross_entropy");
  auto zn = logits.node_ptr(), yn = y.node_ptr();
  detail::record({&logits}, y, [zn, yn, K, label, lse] {
    Real* gz = detail::grad_of(zn);
    if (!gz) return;
    const Real g = yn->grad[0];
    for (std::size_t k = 0; k < K; ++k) {
      const Real p = std::exp(zn->data[k] - lse);
      gz[k] += g * (p - (k == label ? Real(1) : Real(0)));
    }
  });
  return y;
}

}  // namespace kinform
