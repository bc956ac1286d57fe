#pragma once

// Gaussian summaries of embedding sets and the Frechet distance between them.
//
// Accumulation uses per-block two-pass moments combined with the pairwise
// update of Chan, Golub and LeVeque, so partitioned accumulation followed by
// merge agrees with a single serial pass to rounding error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "embedset.hpp"
#include "error.hpp"
#include "linalg.hpp"

namespace t2av {

class GaussianStats {
 public:
  GaussianStats() = default;

  /// Empty accumulator (identity element of merge).
  explicit GaussianStats(std::size_t dim) : dim_(dim), mean_(dim, 0.0), co_moment_(dim, dim) {}

  /// Stats from finalized moments; co-moment is reconstructed as cov * (count - 1).
  static GaussianStats from_moments(std::size_t count, std::vector<double> mean, const Matrix& cov) {
    const std::size_t d = mean.size();
    if (!cov.square() || cov.rows() != d) throw ShapeMismatch("covariance does not match mean");
    if (count < 2) throw InsufficientRows("moments require count >= 2");
    GaussianStats s(d);
    s.count_ = count;
    s.mean_ = std::move(mean);
    s.co_moment_ = cov * static_cast<double>(count - 1);
    return s;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return count_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  const Matrix& co_moment() const noexcept { return co_moment_; }

  /// Unbiased sample covariance (divisor N - 1).
  Matrix cov() const {
    if (count_ < 2) throw InsufficientRows("covariance needs at least 2 rows, have " + std::to_string(count_));
    return co_moment_ * (1.0 / static_cast<double>(count_ - 1));
  }

  /// Folds a row-major block of `rows.size() / dim` rows into the accumulator.
  void accumulate(std::span<const float> rows) {
    if (dim_ == 0) throw InvalidArgument("accumulator has no dimension");
    if (rows.size() % dim_ != 0) throw ShapeMismatch("row block is not a multiple of dim");
    const std::size_t n = rows.size() / dim_;
    for (std::size_t start = 0; start < n; start += kBlockRows) {
      const std::size_t len = std::min(kBlockRows, n - start);
      merge_in(block_stats(rows.subspan(start * dim_, len * dim_), len));
    }
  }

  void accumulate(const EmbeddingSet& set) {
    if (set.dim() != dim_) throw ShapeMismatch("set dim differs from accumulator dim");
    accumulate(set.data());
  }

  /// In-place merge; commutative and associative up to rounding.
  void merge_in(const GaussianStats& o) {
    if (o.dim_ != dim_) {
      throw ShapeMismatch("cannot merge stats of dim " + std::to_string(dim_) + " and " +
                          std::to_string(o.dim_));
    }
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(o.count_);
    const double n = na + nb;
    std::vector<double> delta(dim_);
    for (std::size_t i = 0; i < dim_; ++i) delta[i] = o.mean_[i] - mean_[i];
    const double w = na * nb / n;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double di = delta[i] * w;
      auto row = co_moment_.row(i);
      const auto orow = o.co_moment_.row(i);
      for (std::size_t j = 0; j < dim_; ++j) row[j] += orow[j] + di * delta[j];
    }
    for (std::size_t i = 0; i < dim_; ++i) mean_[i] += delta[i] * (nb / n);
    count_ += o.count_;
  }

  friend bool operator==(const GaussianStats&, const GaussianStats&) = default;

 private:
  static constexpr std::size_t kBlockRows = 4096;

  GaussianStats block_stats(std::span<const float> rows, std::size_t n) const {
    GaussianStats s(dim_);
    s.count_ = n;
    if (n == 0) return s;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < dim_; ++i) s.mean_[i] += rows[r * dim_ + i];
    for (auto& m : s.mean_) m /= static_cast<double>(n);

    // Upper triangle of sum (x - m)(x - m)^T, mirrored afterwards.
    std::vector<double> d(dim_);
    auto cm = s.co_moment_.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < dim_; ++i) d[i] = rows[r * dim_ + i] - s.mean_[i];
      for (std::size_t i = 0; i < dim_; ++i) {
        const double di = d[i];
        double* out = cm.data() + i * dim_;
        for (std::size_t j = i; j < dim_; ++j) out[j] += di * d[j];
      }
    }
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < i; ++j) cm[i * dim_ + j] = cm[j * dim_ + i];
    return s;
  }

  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  Matrix co_moment_;
};

inline GaussianStats merge(GaussianStats a, const GaussianStats& b) {
  a.merge_in(b);
  return a;
}

inline GaussianStats fit(const EmbeddingSet& set) {
  if (set.count() < 2) {
    throw InsufficientRows("fit needs at least 2 rows, have " + std::to_string(set.count()));
  }
  GaussianStats s(set.dim());
  s.accumulate(set.data());
  return s;
}

/// Partitioned fit: contiguous row ranges accumulated concurrently and merged
/// in partition order, so the result depends only on `threads`.
inline GaussianStats fit_parallel(const EmbeddingSet& set, unsigned threads) {
  if (set.count() < 2) {
    throw InsufficientRows("fit needs at least 2 rows, have " + std::to_string(set.count()));
  }
  threads = std::max(1u, threads);
  const std::size_t n = set.count();
  if (threads == 1 || n < 2 * threads) return fit(set);
  std::vector<GaussianStats> parts(threads, GaussianStats(set.dim()));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = n * t / threads;
    const std::size_t hi = n * (t + 1) / threads;
    pool.emplace_back([&, t, lo, hi] {
      parts[t].accumulate(set.data().subspan(lo * set.dim(), (hi - lo) * set.dim()));
    });
  }
  for (auto& th : pool) th.join();
  GaussianStats total(set.dim());
  for (const auto& p : parts) total.merge_in(p);
  return total;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

struct SymEig {
  std::vector<double> values;  // descending
  Matrix vectors;              // orthonormal columns, column k pairs with values[k]
};

inline SymEig sym_eig(const Matrix& m, bool want_vectors = true) {
  if (!m.square()) throw ShapeMismatch("sym_eig needs a square matrix");
  const std::size_t n = m.rows();
  const double norm = frobenius_norm(m);
  if (asymmetry(m) > 1e-8 * norm) throw AsymmetricMatrix("sym_eig: input is not symmetric");

  Matrix a = m;
  symmetrize(a);
  Matrix v = want_vectors ? Matrix::identity(n) : Matrix();

  // A rotation is skipped when |a_pq| is negligible against both diagonals
  // or against the matrix norm; a sweep without rotations ends iteration.
  const double tiny = 1e-17 * norm;
  const std::size_t max_sweeps = std::max<std::size_t>(100 * n, 1);
  bool converged = n < 2;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        const double app = a(p, p);
        const double aqq = a(q, q);
        if (std::abs(apq) <= tiny || std::abs(apq) <= 1e-16 * std::sqrt(std::abs(app * aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        if (want_vectors) {
          for (std::size_t k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw NotConverged("sym_eig: no convergence after " + std::to_string(max_sweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEig out;
  out.values.resize(n);
  for (std::size_t k = 0; k < n; ++k) out.values[k] = a(order[k], order[k]);
  if (want_vectors) {
    out.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

namespace detail {

/// Clamps eigenvalues within -1e-8 * lambda_max to zero; anything lower is an error.
inline void clamp_psd(std::vector<double>& values, const char* what) {
  const double top = values.empty() ? 0.0 : std::max(values.front(), 0.0);
  const double floor = -1e-8 * top;
  for (double& l : values) {
    if (l < floor) {
      throw IndefiniteMatrix(std::string(what) + ": eigenvalue " + std::to_string(l) +
                             " below tolerance for a PSD matrix");
    }
    l = std::max(l, 0.0);
  }
}

}  // namespace detail

inline Matrix psd_sqrt(const Matrix& m) {
  SymEig e = sym_eig(m);
  detail::clamp_psd(e.values, "psd_sqrt");
  const std::size_t n = m.rows();
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double r = std::sqrt(e.values[k]);
    if (r == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = e.vectors(i, k) * r;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * e.vectors(j, k);
    }
  }
  symmetrize(out);
  return out;
}

/// Tr((A B)^{1/2}) for symmetric PSD A, B, evaluated as Tr((A^{1/2} B A^{1/2})^{1/2}).
inline double trace_sqrt_product(const Matrix& a, const Matrix& b) {
  const Matrix ah = psd_sqrt(a);
  Matrix inner = ah * b * ah;
  symmetrize(inner);
  SymEig e = sym_eig(inner, /*want_vectors=*/false);
  detail::clamp_psd(e.values, "frechet cross term");
  double s = 0.0;
  for (double l : e.values) s += std::sqrt(l);
  return s;
}

/// Frechet (Wasserstein-2) distance between the Gaussian fits:
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
inline double frechet(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim()) {
    throw ShapeMismatch("frechet: dims differ (" + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + ")");
  }
  const Matrix ca = a.cov();
  const Matrix cb = b.cov();
  if (a.mean() == b.mean() && ca == cb) return 0.0;

  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a.mean()[i] - b.mean()[i];
    mean_term += d * d;
  }
  const double value = mean_term + ca.trace() + cb.trace() - 2.0 * trace_sqrt_product(ca, cb);
  if (value < 0.0) {
    if (value >= -1e-6) return 0.0;
    throw NumericalError("frechet: distance evaluated to " + std::to_string(value));
  }
  return value;
}

// ---------------------------------------------------------------------------
// JSON: {dim, count, mean, cov}, numbers at 17 significant digits
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string to_json(const GaussianStats& s) {
  std::string out = "{\"dim\":" + std::to_string(s.dim()) + ",\"count\":" + std::to_string(s.count()) +
                    ",\"mean\":[";
  for (std::size_t i = 0; i < s.dim(); ++i) {
    if (i) out += ',';
    out += detail::format_g17(s.mean()[i]);
  }
  out += "],\"cov\":";
  if (s.count() < 2) {
    out += "null";
  } else {
    const Matrix c = s.cov();
    out += '[';
    for (std::size_t i = 0; i < s.dim(); ++i) {
      if (i) out += ',';
      out += '[';
      for (std::size_t j = 0; j < s.dim(); ++j) {
        if (j) out += ',';
        out += detail::format_g17(c(i, j));
      }
      out += ']';
    }
    out += ']';
  }
  out += '}';
  return out;
}

inline GaussianStats stats_from_json(const nlohmann::json& j) {
  try {
    const auto dim = j.at("dim").get<std::size_t>();
    const auto count = j.at("count").get<std::size_t>();
    auto mean = j.at("mean").get<std::vector<double>>();
    const auto rows = j.at("cov").get<std::vector<std::vector<double>>>();
    if (mean.size() != dim || rows.size() != dim) throw ShapeMismatch("stats JSON: dim mismatch");
    Matrix cov(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (rows[i].size() != dim) throw ShapeMismatch("stats JSON: ragged covariance");
      for (std::size_t k = 0; k < dim; ++k) cov(i, k) = rows[i][k];
    }
    return GaussianStats::from_moments(count, std::move(mean), cov);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed stats JSON: ") + e.what());
  }
}

}  // namespace t2av
