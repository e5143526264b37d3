#include "splab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "splab/errors.hpp"

namespace splab {
namespace {

using Storage = std::shared_ptr<detail::TensorStorage>;

Tensor make_result(Shape shape, std::vector<double> data, bool record) {
  return Tensor(std::move(shape), std::move(data), record);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Accumulates into the grad buffer of `s` only when it participates in
// differentiation.
inline std::vector<double>* grad_of(const Storage& s) {
  return s->requires_grad ? &s->grad_buffer() : nullptr;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  const bool record = should_record({&a, &b});
  Tensor result = make_result({m, n}, std::move(out), record);
  if (record) {
    Tape::active()->record([sa = a.storage(), sb = b.storage(), so = result.storage(), m, k, n] {
      const auto& dC = so->grad_buffer();
      if (auto* dA = grad_of(sa)) {
        const auto& Bv = sb->data;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * Bv[p * n + j];
            (*dA)[i * k + p] += acc;
          }
        }
      }
      if (auto* dB = grad_of(sb)) {
        const auto& Av = sa->data;
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += Av[i * k + p] * dC[i * n + j];
            (*dB)[p * n + j] += acc;
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  const bool record = should_record({&a});
  Tensor result = make_result({n, m}, std::move(out), record);
  if (record) {
    Tape::active()->record([sa = a.storage(), so = result.storage(), m, n] {
      auto* dA = grad_of(sa);
      if (!dA) return;
      const auto& dO = so->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*dA)[i * n + j] += dO[j * m + i];
    });
  }
  return result;
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same_shape(a, b, name);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i], B[i]);
  const bool record = should_record({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sa = a.storage(), sb = b.storage(), so = result.storage(), da, db] {
      const auto& dO = so->grad_buffer();
      if (auto* g = grad_of(sa))
        for (std::size_t i = 0; i < dO.size(); ++i) (*g)[i] += da(sa->data[i], sb->data[i]) * dO[i];
      if (auto* g = grad_of(sb))
        for (std::size_t i = 0; i < dO.size(); ++i) (*g)[i] += db(sa->data[i], sb->data[i]) * dO[i];
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  const auto A = a.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * factor;
  const bool record = should_record({&a});
  Tensor result = make_result(a.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sa = a.storage(), so = result.storage(), factor] {
      if (auto* g = grad_of(sa)) {
        const auto& dO = so->grad_buffer();
        for (std::size_t i = 0; i < dO.size(); ++i) (*g)[i] += factor * dO[i];
      }
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.numel() != d) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit rows of " +
                         shape_string(x.shape()));
  }
  const auto X = x.data();
  const auto Bv = bias.data();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = X[i * d + j] + Bv[j];
  const bool record = should_record({&x, &bias});
  Tensor result = make_result(x.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), sb = bias.storage(), so = result.storage(), n, d] {
      const auto& dO = so->grad_buffer();
      if (auto* g = grad_of(sx))
        for (std::size_t i = 0; i < n * d; ++i) (*g)[i] += dO[i];
      if (auto* g = grad_of(sb))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) (*g)[j] += dO[i * d + j];
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  const bool record = should_record({&x});
  Tensor result = make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage()] {
      if (auto* g = grad_of(sx)) {
        const auto& dO = so->grad_buffer();
        for (std::size_t i = 0; i < dO.size(); ++i) (*g)[i] += dO[i];
      }
    });
  }
  return result;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto X = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  const bool record = should_record({&x});
  Tensor result = make_result(x.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage(), m, n] {
      auto* g = grad_of(sx);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      const auto& Y = so->data;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += Y[i * n + j] * dY[i * n + j];
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += Y[i * n + j] * (dY[i * n + j] - dot);
      }
    });
  }
  return result;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layernorm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layernorm: affine parameters must have " + std::to_string(d) + " elements");
  }
  const auto X = x.data();
  const auto G = gamma.data();
  const auto Bt = beta.data();
  std::vector<double> xhat(n * d), inv_std(n), out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = G[j] * xhat[i * d + j] + Bt[j];
    }
  }
  const bool record = should_record({&x, &gamma, &beta});
  Tensor result = make_result(x.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = result.storage(),
                            xhat = std::move(xhat), inv_std = std::move(inv_std), n, d] {
      const auto& dY = so->grad_buffer();
      const auto& Gv = sg->data;
      if (auto* dG = grad_of(sg))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) (*dG)[j] += dY[i * d + j] * xhat[i * d + j];
      if (auto* dB = grad_of(sb))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) (*dB)[j] += dY[i * d + j];
      if (auto* dX = grad_of(sx)) {
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dY[i * d + j] * Gv[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * d + j];
          }
          mean_dxhat *= inv_d;
          mean_dxhat_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dY[i * d + j] * Gv[j];
            (*dX)[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return result;
}

namespace {
constexpr double kGeluCubic = 0.044715;
const double kSqrtTwoOverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrtTwoOverPi * (x + kGeluCubic * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = gelu_value(X[i]);
  const bool record = should_record({&x});
  Tensor result = make_result(x.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage()] {
      auto* g = grad_of(sx);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      for (std::size_t i = 0; i < dY.size(); ++i) {
        const double v = sx->data[i];
        const double t = std::tanh(kSqrtTwoOverPi * (v + kGeluCubic * v * v * v));
        const double dt = (1.0 - t * t) * kSqrtTwoOverPi * (1.0 + 3.0 * kGeluCubic * v * v);
        (*g)[i] += dY[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  }
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(kernels, 4, "conv2d");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = kernels.dim(0), KH = kernels.dim(2), KW = kernels.dim(3);
  if (kernels.dim(1) != C) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " has " + std::to_string(C) +
                         " channels but kernels " + shape_string(kernels.shape()) + " expect " +
                         std::to_string(kernels.dim(1)));
  }
  if (bias && bias->numel() != O) {
    throw DimensionError("conv2d: bias " + shape_string(bias->shape()) + " does not match " +
                         std::to_string(O) + " output channels");
  }
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    throw DimensionError("conv2d: kernel " + shape_string(kernels.shape()) + " larger than padded input " +
                         shape_string(x.shape()));
  }
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
  const auto X = x.data();
  const auto K = kernels.data();
  std::vector<double> out(B * O * OH * OW, 0.0);
  const auto in_index = [&](std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return ((b * C + c) * H + h) * W + w;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t kh = 0; kh < KH; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - static_cast<std::ptrdiff_t>(pad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += X[in_index(b, c, ih, iw)] * K[((o * C + c) * KH + kh) * KW + kw];
              }
            }
          if (bias) acc += bias->data()[o];
          out[((b * O + o) * OH + oh) * OW + ow] = acc;
        }
  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  const bool record = should_record({&x, &kernels, bias_ptr});
  Tensor result = make_result({B, O, OH, OW}, std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), sk = kernels.storage(),
                            sbias = bias ? bias->storage() : Storage{}, so = result.storage(), B, C, H, W, O,
                            KH, KW, OH, OW, stride, pad] {
      const auto& dY = so->grad_buffer();
      auto* dX = grad_of(sx);
      auto* dK = grad_of(sk);
      auto* dBias = sbias ? grad_of(sbias) : nullptr;
      const auto& Xv = sx->data;
      const auto& Kv = sk->data;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
              const double g = dY[((b * O + o) * OH + oh) * OW + ow];
              if (dBias) (*dBias)[o] += g;
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t kh = 0; kh < KH; ++kh) {
                  const std::ptrdiff_t ih =
                      static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    const std::ptrdiff_t iw =
                        static_cast<std::ptrdiff_t>(ow * stride + kw) - static_cast<std::ptrdiff_t>(pad);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                    const std::size_t xi = ((b * C + c) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw);
                    const std::size_t ki = ((o * C + c) * KH + kh) * KW + kw;
                    if (dX) (*dX)[xi] += g * Kv[ki];
                    if (dK) (*dK)[ki] += g * Xv[xi];
                  }
                }
            }
    });
  }
  return result;
}

Tensor avgpool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "avgpool2d");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k == 0 || H % k != 0 || W % k != 0) {
    throw DimensionError("avgpool2d: window " + std::to_string(k) + " does not tile " + shape_string(x.shape()));
  }
  const std::size_t OH = H / k, OW = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto X = x.data();
  std::vector<double> out(B * C * OH * OW);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) acc += X[(bc * H + oh * k + i) * W + ow * k + j];
        out[(bc * OH + oh) * OW + ow] = acc * inv;
      }
  const bool record = should_record({&x});
  Tensor result = make_result({B, C, OH, OW}, std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage(), B, C, H, W, OH, OW, k, inv] {
      auto* g = grad_of(sx);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t oh = 0; oh < OH; ++oh)
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const double d = dY[(bc * OH + oh) * OW + ow] * inv;
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) (*g)[(bc * H + oh * k + i) * W + ow * k + j] += d;
          }
    });
  }
  return result;
}

Tensor global_avgpool(const Tensor& x) {
  require_rank(x, 4, "global_avgpool");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(HW);
  const auto X = x.data();
  std::vector<double> out(B * C);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += X[bc * HW + i];
    out[bc] = acc * inv;
  }
  const bool record = should_record({&x});
  Tensor result = make_result({B, C}, std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage(), B, C, HW, inv] {
      auto* g = grad_of(sx);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t i = 0; i < HW; ++i) (*g)[bc * HW + i] += dY[bc] * inv;
    });
  }
  return result;
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_rows");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw RangeError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    }
  }
  const auto L = logits.data();
  std::vector<double> probs(B * C), out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = L.data() + b * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      probs[b * C + c] = std::exp(row[c] - mx);
      total += probs[b * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] /= total;
    out[b] = mx + std::log(total) - row[labels[b]];
  }
  const bool record = should_record({&logits});
  Tensor result = make_result({B}, std::move(out), record);
  if (record) {
    Tape::active()->record([sl = logits.storage(), so = result.storage(), probs = std::move(probs),
                            y = std::vector<int>(labels.begin(), labels.end()), B, C] {
      auto* g = grad_of(sl);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const double target = static_cast<int>(c) == y[b] ? 1.0 : 0.0;
          (*g)[b * C + c] += dY[b] * (probs[b * C + c] - target);
        }
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return mean(cross_entropy_rows(logits, labels));
}

Tensor sum(const Tensor& x) {
  std::vector<double> ones(x.numel(), 1.0);
  return weighted_sum(x, ones);
}

Tensor mean(const Tensor& x) {
  std::vector<double> w(x.numel(), 1.0 / static_cast<double>(x.numel()));
  return weighted_sum(x, w);
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for tensor " +
                         shape_string(x.shape()));
  }
  const auto X = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += weights[i] * X[i];
  const bool record = should_record({&x});
  Tensor result = make_result({1}, {acc}, record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage(),
                            w = std::vector<double>(weights.begin(), weights.end())] {
      auto* g = grad_of(sx);
      if (!g) return;
      const double d = so->grad_buffer()[0];
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += w[i] * d;
    });
  }
  return result;
}

Tensor prepend_class_token(const Tensor& patch_tokens, const Tensor& cls, std::size_t batch) {
  require_rank(patch_tokens, 2, "prepend_class_token");
  const std::size_t rows = patch_tokens.dim(0), d = patch_tokens.dim(1);
  if (batch == 0 || rows % batch != 0 || cls.numel() != d) {
    throw DimensionError("prepend_class_token: cannot split " + shape_string(patch_tokens.shape()) + " into " +
                         std::to_string(batch) + " samples with class token " + shape_string(cls.shape()));
  }
  const std::size_t N = rows / batch, T = N + 1;
  const auto P = patch_tokens.data();
  const auto Cv = cls.data();
  std::vector<double> out(batch * T * d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(Cv.begin(), Cv.end(), out.begin() + static_cast<std::ptrdiff_t>(b * T * d));
    std::copy(P.begin() + static_cast<std::ptrdiff_t>(b * N * d), P.begin() + static_cast<std::ptrdiff_t>((b + 1) * N * d),
              out.begin() + static_cast<std::ptrdiff_t>((b * T + 1) * d));
  }
  const bool record = should_record({&patch_tokens, &cls});
  Tensor result = make_result({batch * T, d}, std::move(out), record);
  if (record) {
    Tape::active()->record([sp = patch_tokens.storage(), sc = cls.storage(), so = result.storage(), batch, N, T, d] {
      const auto& dY = so->grad_buffer();
      if (auto* g = grad_of(sc))
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < d; ++j) (*g)[j] += dY[b * T * d + j];
      if (auto* g = grad_of(sp))
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < N * d; ++i) (*g)[b * N * d + i] += dY[(b * T + 1) * d + i];
    });
  }
  return result;
}

Tensor add_tiled(const Tensor& x, const Tensor& pos) {
  require_rank(x, 2, "add_tiled");
  require_rank(pos, 2, "add_tiled");
  const std::size_t rows = x.dim(0), d = x.dim(1), T = pos.dim(0);
  if (pos.dim(1) != d || rows % T != 0) {
    throw DimensionError("add_tiled: " + shape_string(pos.shape()) + " does not tile " + shape_string(x.shape()));
  }
  const auto X = x.data();
  const auto Pv = pos.data();
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = X[r * d + j] + Pv[(r % T) * d + j];
  const bool record = should_record({&x, &pos});
  Tensor result = make_result(x.shape(), std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), sp = pos.storage(), so = result.storage(), rows, d, T] {
      const auto& dY = so->grad_buffer();
      if (auto* g = grad_of(sx))
        for (std::size_t i = 0; i < rows * d; ++i) (*g)[i] += dY[i];
      if (auto* g = grad_of(sp))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) (*g)[(r % T) * d + j] += dY[r * d + j];
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty row selection");
  const auto X = x.data();
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw RangeError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const bool record = should_record({&x});
  Tensor result = make_result({rows.size(), d}, std::move(out), record);
  if (record) {
    Tape::active()->record([sx = x.storage(), so = result.storage(),
                            idx = std::vector<std::size_t>(rows.begin(), rows.end()), d] {
      auto* g = grad_of(sx);
      if (!g) return;
      const auto& dY = so->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) (*g)[idx[i] * d + j] += dY[i * d + j];
    });
  }
  return result;
}

Tensor multi_head_attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                            const std::vector<double>* additive_mask, AttentionProbs* capture) {
  require_rank(qkv, 2, "multi_head_attention");
  const std::size_t T = tokens, width = qkv.dim(1);
  if (batch == 0 || heads == 0 || qkv.dim(0) != batch * T || width % 3 != 0 || (width / 3) % heads != 0) {
    throw DimensionError("multi_head_attention: projection " + shape_string(qkv.shape()) + " does not fit batch " +
                         std::to_string(batch) + ", tokens " + std::to_string(T) + ", heads " +
                         std::to_string(heads));
  }
  if (additive_mask && additive_mask->size() != T * T) {
    throw DimensionError("multi_head_attention: mask must be " + std::to_string(T) + "x" + std::to_string(T));
  }
  const std::size_t d = width / 3, dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = qkv.data();
  // probs[(b * heads + h) * T * T + i * T + j]
  std::vector<double> probs(batch * heads * T * T);
  std::vector<double> out(batch * T * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (b * heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = Q.data() + (b * T + i) * width + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j) {
          const double* kj = Q.data() + (b * T + j) * width + d + h * dh;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          double logit = dot * s;
          if (additive_mask) logit += (*additive_mask)[i * T + j];
          P[i * T + j] = logit;
          mx = std::max(mx, logit);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          P[i * T + j] = std::exp(P[i * T + j] - mx);
          total += P[i * T + j];
        }
        for (std::size_t j = 0; j < T; ++j) P[i * T + j] /= total;
        double* oi = out.data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = P[i * T + j];
          const double* vj = Q.data() + (b * T + j) * width + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  if (capture) {
    capture->probs.assign(batch, std::vector<std::vector<double>>(heads));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        const auto first = probs.begin() + static_cast<std::ptrdiff_t>((b * heads + h) * T * T);
        capture->probs[b][h].assign(first, first + static_cast<std::ptrdiff_t>(T * T));
      }
  }
  const bool record = should_record({&qkv});
  Tensor result = make_result({batch * T, d}, std::move(out), record);
  if (record) {
    Tape::active()->record([sq = qkv.storage(), so = result.storage(), probs = std::move(probs), batch, T, heads, d,
                            dh, width, s] {
      auto* g = grad_of(sq);
      if (!g) return;
      const auto& dO = so->grad_buffer();
      const auto& Qv = sq->data;
      std::vector<double> dS(T * T);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const double* P = probs.data() + (b * heads + h) * T * T;
          // dP then dS = P * (dP - rowdot(P, dP))
          for (std::size_t i = 0; i < T; ++i) {
            const double* doi = dO.data() + (b * T + i) * d + h * dh;
            double rowdot = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
              const double* vj = Qv.data() + (b * T + j) * width + 2 * d + h * dh;
              double dp = 0.0;
              for (std::size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
              dS[i * T + j] = dp;
              rowdot += P[i * T + j] * dp;
            }
            for (std::size_t j = 0; j < T; ++j) dS[i * T + j] = P[i * T + j] * (dS[i * T + j] - rowdot);
          }
          for (std::size_t j = 0; j < T; ++j) {
            double* dvj = g->data() + (b * T + j) * width + 2 * d + h * dh;
            for (std::size_t i = 0; i < T; ++i) {
              const double pij = P[i * T + j];
              const double* doi = dO.data() + (b * T + i) * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * doi[c];
            }
          }
          for (std::size_t i = 0; i < T; ++i) {
            double* dqi = g->data() + (b * T + i) * width + h * dh;
            for (std::size_t j = 0; j < T; ++j) {
              const double ds = dS[i * T + j] * s;
              const double* kj = Qv.data() + (b * T + j) * width + d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
            }
          }
          for (std::size_t j = 0; j < T; ++j) {
            double* dkj = g->data() + (b * T + j) * width + d + h * dh;
            for (std::size_t i = 0; i < T; ++i) {
              const double ds = dS[i * T + j] * s;
              const double* qi = Qv.data() + (b * T + i) * width + h * dh;
              for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
            }
          }
        }
      }
    });
  }
  return result;
}

}  // namespace splab
