#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "splab/errors.hpp"
#include "splab/grad_check.hpp"
#include "splab/ops.hpp"
#include "splab/rng.hpp"
#include "support/generators.hpp"

using namespace splab;
using splab::proptest::for_all;
using splab::proptest::Gen;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
  return Tensor({r, c}, std::move(v), grad);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Central-difference check of one primitive wrapped in a scalar loss.
void expect_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params, double tol = 1e-5) {
  const auto r = grad_check(loss, std::move(params));
  EXPECT_LT(r.max_relative_error, tol);
  EXPECT_GT(r.coordinates_checked, 0u);
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, CopiesShareStorageAndDetachDoesNot) {
  Tensor a = Tensor::full({2}, 1.0);
  Tensor b = a;
  b.mutable_data()[0] = 5.0;
  EXPECT_EQ(a.at(0), 5.0);
  Tensor c = a.detach();
  c.mutable_data()[0] = 7.0;
  EXPECT_EQ(a.at(0), 5.0);
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tensor, CheckFiniteRejectsNanAndInf) {
  EXPECT_NO_THROW(check_finite(Tensor::full({3}, 1.0), "x"));
  EXPECT_THROW(check_finite(Tensor({2}, {1.0, NAN}), "x"), NumericError);
  EXPECT_THROW(check_finite(Tensor({2}, {INFINITY, 1.0}), "x"), NumericError);
}

TEST(Tape, BackwardRunsInReverseRecordingOrder) {
  Tape tape;
  std::vector<int> order;
  tape.record([&] { order.push_back(1); });
  tape.record([&] { order.push_back(2); });
  tape.record([&] { order.push_back(3); });
  tape.backward(Tensor::scalar(0.0, true));
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
}

TEST(Tape, GradientsAccumulateAdditively) {
  Tensor w = Tensor::scalar(3.0, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = add(mul(w, w), mul(w, w));  // 2 w^2
    tape.backward(loss);
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tape tape;
  EXPECT_THROW(tape.backward(Tensor::zeros({2}, true)), ContractError);
}

TEST(Tape, NothingIsRecordedWithoutActiveTape) {
  Tensor a = Tensor::full({2, 2}, 1.0, true);
  EXPECT_EQ(Tape::active(), nullptr);
  const Tensor b = matmul(a, a);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor i2 = mat(2, 2, {1, 0, 0, 1});
  const Tensor m = mat(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(values(matmul(i2, m)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, AnnihilatingProductIsZero) {
  const Tensor a = mat(2, 2, {1, 0, 0, 0});
  const Tensor b = mat(2, 2, {0, 0, 0, 1});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Matmul, EqualsTripleLoopOracleExactly) {
  for_all(50, 11, [](Gen& g) {
    const std::size_t m = g.size(1, 7), k = g.size(1, 7), n = g.size(1, 7);
    const Tensor a = g.matrix(m, k), b = g.matrix(k, n);
    EXPECT_EQ(values(matmul(a, b)), proptest::matmul_oracle(values(a), values(b), m, k, n)) << "seed " << g.seed();
  });
  Gen g(3);
  const Tensor a = g.matrix(3, 4), b = g.matrix(4, 2);
  EXPECT_EQ(values(matmul(a, b)), proptest::matmul_oracle(values(a), values(b), 3, 4, 2));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricRowIsUniform) {
  EXPECT_EQ(values(softmax_rows(mat(1, 2, {0, 0}))), (std::vector<double>{0.5, 0.5}));
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto v = values(softmax_rows(mat(1, 2, {1000, 0})));
  EXPECT_NEAR(v[0], 1.0, 1e-12);
  EXPECT_NEAR(v[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesDirectFormula) {
  const auto v = values(softmax_rows(mat(1, 3, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v[i], std::exp(i + 1.0) / z, 1e-14);
}

TEST(Softmax, RowsSumToOneForRandomInputs) {
  for_all(100, 12, [](Gen& g) {
    const std::size_t m = g.size(1, 6), n = g.size(1, 9);
    const auto v = values(softmax_rows(g.matrix(m, n, g.real(0.1, 50.0))));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(v[i * n + j], 0.0);
        s += v[i * n + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12) << "seed " << g.seed();
    }
  });
}

TEST(Softmax, NegativeInfinityMapsToExactZero) {
  const auto v = values(softmax_rows(mat(1, 3, {1.0, -INFINITY, 2.0})));
  EXPECT_EQ(v[1], 0.0);
  EXPECT_NEAR(v[0] + v[2], 1.0, 1e-15);
}

TEST(Layernorm, ConstantVectorMapsToZero) {
  const auto v = values(layernorm(mat(1, 4, {3, 3, 3, 3}), Tensor::full({4}, 1.0), Tensor::zeros({4})));
  for (double x : v) EXPECT_EQ(x, 0.0);
}

TEST(Layernorm, ZeroGainReturnsBeta) {
  const Tensor beta({3}, {0.5, -1.0, 2.0});
  const auto v = values(layernorm(mat(2, 3, {1, 5, 2, -3, 0, 9}), Tensor::zeros({3}), beta));
  EXPECT_EQ(v, (std::vector<double>{0.5, -1.0, 2.0, 0.5, -1.0, 2.0}));
}

TEST(Layernorm, NormalizesMeanAndVariance) {
  for_all(20, 13, [](Gen& g) {
    const std::size_t d = g.size(4, 32);
    const auto v = values(layernorm(g.matrix(1, d, 10.0), Tensor::full({d}, 1.0), Tensor::zeros({d})));
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_LT(std::abs(var - 1.0), 1e-6);
  });
}

TEST(Gelu, ZeroMapsToZero) { EXPECT_EQ(gelu_value(0.0), 0.0); }

TEST(Gelu, UsesTanhApproximation) {
  const double x = 0.7;
  const double expected = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
  EXPECT_DOUBLE_EQ(gelu_value(x), expected);
}

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  const int label = 0;
  EXPECT_NEAR(cross_entropy(mat(1, 2, {0, 0}), std::span<const int>(&label, 1)).item(), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, RejectsOutOfRangeLabels) {
  const int label = 2;
  EXPECT_THROW(cross_entropy(mat(1, 2, {0, 0}), std::span<const int>(&label, 1)), RangeError);
}

TEST(Conv2d, IdentityKernelLeavesInputUnchanged) {
  Gen g(5);
  const Tensor x = g.tensor({2, 3, 5, 5});
  std::vector<double> k(3 * 3, 0.0);
  for (std::size_t c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
  const Tensor kernels({3, 3, 1, 1}, k);
  EXPECT_EQ(values(conv2d(x, kernels, std::nullopt, 1, 0)), values(x));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), std::nullopt, 1, 1), DimensionError);
}

TEST(Conv2d, MatchesDirectSumOracle) {
  Gen g(6);
  const Tensor x = g.tensor({1, 2, 6, 6});
  const Tensor k = g.tensor({3, 2, 3, 3});
  const Tensor b = g.tensor({3});
  const Tensor y = conv2d(x, k, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = b.at(o);
        for (std::size_t ch = 0; ch < 2; ++ch)
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
              const long rr = static_cast<long>(2 * r + i) - 1, cc = static_cast<long>(2 * c + j) - 1;
              if (rr < 0 || cc < 0 || rr >= 6 || cc >= 6) continue;
              s += x.at(ch * 36 + static_cast<std::size_t>(rr) * 6 + static_cast<std::size_t>(cc)) *
                   k.at(((o * 2 + ch) * 3 + i) * 3 + j);
            }
        EXPECT_NEAR(y.at((o * 3 + r) * 3 + c), s, 1e-12);
      }
}

TEST(Pooling, AveragesAreExact) {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 6});
  EXPECT_EQ(values(avgpool2d(x, 2)), (std::vector<double>{3.0}));
  EXPECT_EQ(values(global_avgpool(x)), (std::vector<double>{3.0}));
}

TEST(GradCheck, SquareFunction) {
  Tensor w = Tensor::scalar(3.0, true);
  const auto r = grad_check([&] { return mul(w, w); }, {w});
  EXPECT_LT(r.max_relative_error, 1e-10);
  w.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(mul(w, w));
  }
  EXPECT_NEAR(w.grad()[0], 6.0, 1e-12);
}

TEST(GradCheck, NonScalarLossIsContractError) {
  Tensor w = Tensor::full({2}, 1.0, true);
  EXPECT_THROW(grad_check([&] { return mul(w, w); }, {w}), ContractError);
}

TEST(GradCheck, EveryPrimitiveOnRandomShapes) {
  for_all(3, 14, [](Gen& g) {
    const std::size_t m = g.size(2, 4), k = g.size(2, 4), n = g.size(2, 4);
    Tensor a = g.matrix(m, k, 1.0, true), b = g.matrix(k, n, 1.0, true), c = g.matrix(m, k, 1.0, true);
    Tensor bias = g.tensor({k}, 1.0, true);
    const std::vector<double> w = g.normals(m * n);
    const std::vector<double> wk = g.normals(m * k);
    auto project = [](const Tensor& t, const std::vector<double>& weights) { return weighted_sum(t, weights); };

    expect_gradients([&] { return project(matmul(a, b), w); }, {a, b});
    expect_gradients([&] { return project(transpose(matmul(a, b)), w); }, {a, b});
    expect_gradients([&] { return project(add(a, c), wk); }, {a, c});
    expect_gradients([&] { return project(sub(a, c), wk); }, {a, c});
    expect_gradients([&] { return project(mul(a, c), wk); }, {a, c});
    expect_gradients([&] { return project(scale(a, -1.7), wk); }, {a});
    expect_gradients([&] { return project(add_bias(a, bias), wk); }, {a, bias});
    expect_gradients([&] { return project(reshape(a, {k, m}), wk); }, {a});
    expect_gradients([&] { return project(softmax_rows(a), wk); }, {a});
    expect_gradients([&] { return project(gelu(a), wk); }, {a});
    Tensor gamma = g.tensor({k}, 1.0, true), beta = g.tensor({k}, 1.0, true);
    expect_gradients([&] { return project(layernorm(a, gamma, beta), wk); }, {a, gamma, beta});
    std::vector<int> labels = g.integers(m, 0, static_cast<int>(k) - 1);
    expect_gradients([&] { return cross_entropy(a, labels); }, {a});
    expect_gradients([&] { return mean(mul(a, a)); }, {a});
    expect_gradients([&] { return sum(mul(a, c)); }, {a, c});
    const std::vector<std::size_t> rows{m - 1, 0, m - 1};
    expect_gradients([&] { return sum(mul(gather_rows(a, rows), gather_rows(c, rows))); }, {a, c});
  });
}

TEST(GradCheck, ConvolutionAndPooling) {
  Gen g(15);
  Tensor x = g.tensor({2, 2, 4, 4}, 1.0, true);
  Tensor k = g.tensor({3, 2, 3, 3}, 1.0, true);
  Tensor b = g.tensor({3}, 1.0, true);
  const std::vector<double> w2 = g.normals(2 * 3 * 2 * 2);
  const std::vector<double> w1 = g.normals(2 * 2 * 2 * 2);
  const std::vector<double> wg = g.normals(2 * 2);
  expect_gradients([&] { return weighted_sum(conv2d(x, k, b, 2, 1), w2); }, {x, k, b});
  expect_gradients([&] { return weighted_sum(avgpool2d(x, 2), w1); }, {x});
  expect_gradients([&] { return weighted_sum(global_avgpool(x), wg); }, {x});
}

TEST(GradCheck, TokenOps) {
  Gen g(16);
  const std::size_t batch = 2, n = 3, d = 4;
  Tensor patches = g.matrix(batch * n, d, 1.0, true);
  Tensor cls = g.tensor({d}, 1.0, true);
  Tensor pos = g.matrix(n + 1, d, 1.0, true);
  const std::vector<double> w = g.normals(batch * (n + 1) * d);
  expect_gradients([&] { return weighted_sum(add_tiled(prepend_class_token(patches, cls, batch), pos), w); },
                   {patches, cls, pos});
}

TEST(GradCheck, MultiHeadAttention) {
  Gen g(17);
  const std::size_t batch = 2, tokens = 3, d = 4, heads = 2;
  Tensor qkv = g.matrix(batch * tokens, 3 * d, 1.0, true);
  const std::vector<double> w = g.normals(batch * tokens * d);
  expect_gradients([&] { return weighted_sum(multi_head_attention(qkv, batch, tokens, heads, nullptr, nullptr), w); },
                   {qkv});
}

TEST(Determinism, RngStreamsAreReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_EQ(a.normal(), b.normal());
  }
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
}

TEST(Determinism, RngDistributionsStayInRange) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
    EXPECT_LE(std::abs(r.truncated_normal(0.02)), 0.04);
  }
}
