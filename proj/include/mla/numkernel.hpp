#pragma once

// Dense linear algebra, probability primitives and the seeded generator every
// other module builds on. All arithmetic is double precision and every
// reduction runs left to right, so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mla/error.hpp"

namespace mla {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
    Mat m;
    m.rows = rows_init.size();
    m.cols = m.rows ? rows_init.begin()->size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rows_init) {
      detail::require(r.size() == m.cols, "Mat::from_rows: ragged rows");
      m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool operator==(const Mat&) const = default;
};

inline Vec matvec(const Mat& a, std::span<const double> x) {
  detail::require(a.cols == x.size(), "matvec: a.cols != x.len");
  Vec y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    const double* r = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < a.cols; ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline Mat outer(std::span<const double> x, std::span<const double> y) {
  Mat m(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) m(i, j) = x[i] * y[j];
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  detail::require(a.cols == b.rows, "matmul: inner dimensions differ");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  detail::require(x.size() == y.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double frobenius_distance(const Mat& a, const Mat& b) {
  detail::require(a.rows == b.rows && a.cols == b.cols, "frobenius_distance: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double max_asymmetry(const Mat& a) {
  detail::require(a.rows == a.cols, "max_asymmetry: non-square matrix");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  return worst;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

// Max-subtracted softmax.
inline Vec softmax(std::span<const double> z) {
  detail::require(!z.empty(), "softmax: empty input");
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  Vec p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

// True iff `a` admits a Cholesky factorization with every pivot above 1e-12.
inline bool cholesky_ok(const Mat& a) {
  detail::require(a.rows == a.cols, "cholesky_ok: non-square matrix");
  const std::size_t n = a.rows;
  if (max_asymmetry(a) > 1e-9) return false;
  Mat l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 1e-12)) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

// Gauss-Jordan inverse with partial pivoting. Test oracles and small systems only.
inline Mat inverse(const Mat& a) {
  detail::require(a.rows == a.cols, "inverse: non-square matrix");
  const std::size_t n = a.rows;
  Mat w = a;
  Mat inv = Mat::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(w(r, c)) > std::abs(w(piv, c))) piv = r;
    detail::require(std::abs(w(piv, c)) > 0.0, "inverse: singular matrix");
    if (piv != c)
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(w(c, j), w(piv, j));
        std::swap(inv(c, j), inv(piv, j));
      }
    const double d = w(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      w(c, j) /= d;
      inv(c, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = w(r, c);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        w(r, j) -= f * w(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Sub-seed offsets. Every random stream in the library is Rng(derive_seed(seed, purpose)).
enum class stream : std::uint64_t {
  synthetic_params = 1,   // label matrix V and mixing matrices A_m
  synthetic_latent = 2,   // latent draws z
  synthetic_noise = 16,   // + modality index
  mask = 64,              // + split index
  split = 96,
  init = 128,             // parameter initialization
  batches = 256,          // + training step (or epoch)
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, stream purpose, std::uint64_t index = 0) noexcept {
  return mix64(seed ^ mix64((static_cast<std::uint64_t>(purpose) + index) * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

// Counter-based generator: draw i is mix64(seed + (i+1) * golden). Identical seeds give
// identical streams on every platform (no std:: distributions are involved).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    detail::require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do r = next_u64();
    while (r >= limit);
    return r % n;
  }

  // Standard normal by Box-Muller (cosine branch only, so draws never depend on cached state).
  double normal() noexcept {
    double u1;
    do u1 = uniform();
    while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace mla
