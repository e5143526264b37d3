#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splab/rng.hpp"
#include "splab/tensor.hpp"

namespace splab::proptest {

// Hand-rolled value generators for property tests. Each case gets its own
// seed so a failure can be replayed from the printed case seed alone.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }

  std::size_t size(std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng_.below(hi - lo + 1)); }
  int integer(int lo, int hi) { return lo + static_cast<int>(rng_.below(static_cast<std::uint64_t>(hi - lo + 1))); }
  double real(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(); }
  bool coin() { return rng_.below(2) == 1; }

  std::vector<double> reals(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = real(lo, hi);
    return v;
  }
  std::vector<double> normals(std::size_t n, double stddev = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = stddev * rng_.normal();
    return v;
  }
  std::vector<int> integers(std::size_t n, int lo, int hi) {
    std::vector<int> v(n);
    for (int& x : v) x = integer(lo, hi);
    return v;
  }
  // Scores drawn from a small grid so that ties are frequent.
  std::vector<double> tied_scores(std::size_t n, int levels) {
    std::vector<double> v(n);
    for (double& x : v) x = static_cast<double>(integer(0, levels - 1)) / 4.0;
    return v;
  }
  Tensor matrix(std::size_t rows, std::size_t cols, double stddev = 1.0, bool requires_grad = false) {
    return Tensor({rows, cols}, normals(rows * cols, stddev), requires_grad);
  }
  Tensor tensor(Shape shape, double stddev = 1.0, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), normals(n, stddev), requires_grad);
  }
  // Row-stochastic n x n matrix with strictly positive entries.
  std::vector<double> stochastic(std::size_t n) {
    std::vector<double> m(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] = real(0.01, 1.0);
      for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= s;
    }
    return m;
  }
  // Random orthogonal n x n matrix via Gram-Schmidt on a Gaussian matrix.
  std::vector<double> orthogonal(std::size_t n) {
    std::vector<double> q = normals(n * n);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t prev = 0; prev < c; ++prev) {
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += q[r * n + c] * q[r * n + prev];
        for (std::size_t r = 0; r < n; ++r) q[r * n + c] -= dot * q[r * n + prev];
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < n; ++r) norm += q[r * n + c] * q[r * n + c];
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < n; ++r) q[r * n + c] /= norm;
    }
    return q;
  }

 private:
  Rng rng_;
  std::uint64_t seed_;
};

// Runs `body` on `cases` generated inputs; case i uses seed derive(base, i).
inline void for_all(std::size_t cases, std::uint64_t base_seed, const std::function<void(Gen&)>& body) {
  for (std::size_t i = 0; i < cases; ++i) {
    Gen gen(derive_seed(base_seed, "case/" + std::to_string(i)));
    body(gen);
  }
}

// Naive oracles shared by unit and acceptance tests.
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                         std::size_t k, std::size_t n) {
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// O(n^2) pair counting with ties worth one half.
inline double auroc_oracle(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double a : id)
    for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Sweeps every observed ID score as a candidate threshold and keeps the largest
// one whose TPR reaches the target.
inline double fpr_oracle(const std::vector<double>& id, const std::vector<double>& ood, double target = 0.95) {
  double best = -INFINITY;
  for (double t : id) {
    std::size_t hits = 0;
    for (double a : id) hits += a >= t;
    if (static_cast<double>(hits) >= target * static_cast<double>(id.size()) - 1e-9 && t > best) best = t;
  }
  std::size_t fp = 0;
  for (double b : ood) fp += b >= best;
  return static_cast<double>(fp) / static_cast<double>(ood.size());
}


// Gram-matrix form of linear CKA: HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))
// with K = X X^T, L = Y Y^T and HSIC(K, L) = tr(K H L H).
inline double cka_oracle(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.dim(0);
  const auto gram = [n](const Tensor& m) {
    const std::size_t p = m.dim(1);
    std::vector<double> k(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < p; ++c) k[i * n + j] += m.at(i * p + c) * m.at(j * p + c);
    // H K H with H = I - 11^T / n.
    std::vector<double> row(n, 0.0), col(n, 0.0);
    double all = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        row[i] += k[i * n + j] / static_cast<double>(n);
        col[j] += k[i * n + j] / static_cast<double>(n);
        all += k[i * n + j] / static_cast<double>(n * n);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i * n + j] += all - row[i] - col[j];
    return k;
  };
  const auto k = gram(x), l = gram(y);
  double kl = 0.0, kk = 0.0, ll = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    kl += k[i] * l[i];
    kk += k[i] * k[i];
    ll += l[i] * l[i];
  }
  return kl / std::sqrt(kk * ll);
}

// Right-multiplies an n x p matrix by a p x p matrix.
inline Tensor times(const Tensor& x, const std::vector<double>& q) {
  const std::size_t n = x.dim(0), p = x.dim(1);
  std::vector<double> a(x.data().begin(), x.data().end());
  return Tensor({n, p}, matmul_oracle(a, q, n, p, p));
}

}  // namespace splab::proptest
