#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ham/error.hpp"

namespace ham {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix matmul(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.cols() != rhs.rows()) {
    throw ShapeError("matmul: " + shape_string(lhs) + " * " + shape_string(rhs));
  }
  Matrix out(lhs.rows(), rhs.cols());
  // i-p-j order keeps the inner loop contiguous; summation order over p is fixed.
  for (std::size_t i = 0; i < lhs.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t p = 0; p < lhs.cols(); ++p) {
      const double a = lhs(i, p);
      if (a == 0.0) continue;
      auto rrow = rhs.row(p);
      for (std::size_t j = 0; j < rhs.cols(); ++j) orow[j] += a * rrow[j];
    }
  }
  return out;
}

/// y = m x
inline Vector matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw ShapeError("matvec: " + shape_string(m) + " * vector(" + std::to_string(x.size()) + ")");
  }
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = m^T x
inline Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (m.rows() != x.size()) {
    throw ShapeError("matvec_transposed: " + shape_string(m) + "^T * vector(" +
                     std::to_string(x.size()) + ")");
  }
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

/// m += scale * u v^T
inline void add_outer(Matrix& m, double scale, std::span<const double> u,
                      std::span<const double> v) {
  if (m.rows() != u.size() || m.cols() != v.size()) throw ShapeError("add_outer: shape mismatch");
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double su = scale * u[i];
    if (su == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) r[j] += su * v[j];
  }
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

/// Row-major flattening.
inline Vector vectorize(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

/// [lhs, rhs]
inline Matrix hconcat(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.rows() != rhs.rows()) {
    throw ShapeError("hconcat: " + shape_string(lhs) + " | " + shape_string(rhs));
  }
  Matrix out(lhs.rows(), lhs.cols() + rhs.cols());
  for (std::size_t i = 0; i < lhs.rows(); ++i) {
    std::ranges::copy(lhs.row(i), out.row(i).begin());
    std::ranges::copy(rhs.row(i), out.row(i).begin() + static_cast<std::ptrdiff_t>(lhs.cols()));
  }
  return out;
}

/// [top; bottom]
inline Matrix vconcat(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ShapeError("vconcat: " + shape_string(top) + " / " + shape_string(bottom));
  }
  std::vector<double> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

inline Matrix& add_scaled(Matrix& acc, double scale, const Matrix& m) {
  if (!acc.same_shape(m)) throw ShapeError("add_scaled: " + shape_string(acc) + " vs " + shape_string(m));
  auto a = acc.data();
  auto b = m.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  return acc;
}

inline Matrix scaled(Matrix m, double scale) {
  for (double& v : m.data()) v *= scale;
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline bool all_finite(std::span<const double> v) {
  return std::ranges::all_of(v, [](double x) { return std::isfinite(x); });
}

/// |<u,v>| / (|u| |v|). Zero-norm input is a degenerate-input error.
inline double abs_cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("abs_cosine: length mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("abs_cosine: zero-norm vector");
  return std::min(1.0, std::abs(dot(u, v)) / (nu * nv));
}

inline void check_keep_fraction(double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
}

/// Number of entries retained when keeping the top `keep_fraction` of `n`.
inline std::size_t keep_count(std::size_t n, double keep_fraction) {
  check_keep_fraction(keep_fraction);
  // Guard against 0.6*10 = 6.000000000000001 rounding up to 7.
  const double exact = keep_fraction * static_cast<double>(n);
  const double nearest = std::round(exact);
  const double count = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
  return std::min(n, static_cast<std::size_t>(count));
}

namespace detail {
// Row-major indices ordered by descending magnitude, ascending index on ties.
inline std::vector<std::size_t> magnitude_order(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) {
    return std::abs(v[a]) > std::abs(v[b]);
  });
  return idx;
}
}  // namespace detail

/// Magnitude threshold tau such that the top ceil(k*n) entries satisfy |x| >= tau.
/// When several entries equal tau, retained_mask() breaks the tie by row-major index.
inline double magnitude_threshold(const Matrix& m, double keep_fraction) {
  const std::size_t keep = keep_count(m.size(), keep_fraction);
  if (keep == 0) return 0.0;
  const auto order = detail::magnitude_order(m.data());
  return std::abs(m.data()[order[keep - 1]]);
}

/// Mask of the entries kept by magnitude pruning at `keep_fraction`.
inline std::vector<bool> retained_mask(const Matrix& m, double keep_fraction) {
  const std::size_t keep = keep_count(m.size(), keep_fraction);
  const double tau = magnitude_threshold(m, keep_fraction);
  std::vector<bool> mask(m.size(), false);
  std::size_t kept = 0;
  auto v = m.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > tau) {
      mask[i] = true;
      ++kept;
    }
  }
  for (std::size_t i = 0; i < v.size() && kept < keep; ++i) {
    if (!mask[i] && std::abs(v[i]) == tau) {
      mask[i] = true;
      ++kept;
    }
  }
  return mask;
}

/// Zero every entry outside the top-k magnitude set; shape is preserved.
inline Matrix prune_by_magnitude(const Matrix& m, double keep_fraction) {
  const auto mask = retained_mask(m, keep_fraction);
  Matrix out = m;
  auto v = out.data();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
  return out;
}

/// FNV-1a over the bit patterns of `values`, chained from `h`.
inline std::uint64_t fingerprint(std::span<const double> values,
                                 std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFU;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

inline std::size_t count_nonzero(const Matrix& m) {
  return static_cast<std::size_t>(std::ranges::count_if(m.data(), [](double x) { return x != 0.0; }));
}

}  // namespace ham
