#pragma once

// Scalar-generic numeric kernels shared by detectors, mixture simulation and
// evaluation. All functions accept any Eigen dense expression.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <numeric>
#include <vector>

namespace contamscope {

/// Population variance (divisor n). Two-pass for accuracy.
template <typename Derived>
typename Derived::Scalar population_variance(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.size();
  if (n == 0) return Scalar(0);
  const Scalar mean = x.sum() / Scalar(n);
  return (x.derived().array() - mean).square().sum() / Scalar(n);
}

/// Sample variance (divisor n - 1); requires n >= 2.
template <typename Derived>
typename Derived::Scalar sample_variance(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.size();
  const Scalar mean = x.sum() / Scalar(n);
  return (x.derived().array() - mean).square().sum() / Scalar(n - 1);
}

/// Positions of the `count` smallest entries, ordered by value; ties resolve
/// to the earliest position. `count` is clamped to the size.
template <typename Derived>
std::vector<Eigen::Index> smallest_positions(const Eigen::DenseBase<Derived>& x,
                                             Eigen::Index count) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const auto k = static_cast<std::size_t>(std::clamp<Eigen::Index>(count, 0, x.size()));
  const auto& d = x.derived();
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return d.coeff(a) < d.coeff(b); });
  idx.resize(k);
  return idx;
}

/// Sum of the `count` smallest entries (all entries when count >= size),
/// accumulated in ascending order.
template <typename Derived>
typename Derived::Scalar sum_of_smallest(const Eigen::DenseBase<Derived>& x, Eigen::Index count) {
  typename Derived::Scalar s(0);
  for (Eigen::Index i : smallest_positions(x, count)) s += x.derived().coeff(i);
  return s;
}

/// Cosine of the angle between two vectors. Callers check for zero norms.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

/// Levenshtein distance (unit insert/delete/substitute) between two sequences
/// of equality-comparable elements; single-row dynamic program.
template <typename SeqA, typename SeqB>
std::size_t levenshtein(const SeqA& a, const SeqB& b) {
  const std::size_t n = std::size(b);
  std::vector<std::size_t> row(n + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  std::size_t i = 0;
  for (const auto& ai : a) {
    ++i;
    std::size_t diag = row[0];
    row[0] = i;
    std::size_t j = 0;
    for (const auto& bj : b) {
      ++j;
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (ai == bj ? 0 : 1)});
      diag = up;
    }
  }
  return row[n];
}

/// Mean and sample standard deviation (divisor n - 1); std is absent (NaN) for n < 2.
struct MeanStd {
  double mean = 0.0;
  double std = std::nan("");
  bool has_std() const { return !std::isnan(std); }
};

template <typename Derived>
MeanStd mean_std(const Eigen::DenseBase<Derived>& x) {
  MeanStd out;
  if (x.size() == 0) return out;
  out.mean = static_cast<double>(x.sum()) / static_cast<double>(x.size());
  if (x.size() >= 2) out.std = std::sqrt(static_cast<double>(sample_variance(x)));
  return out;
}

}  // namespace contamscope
