#pragma once

/// @file embedding.hpp
/// Dense embedding vectors, dimension masks and the cosine primitives the
/// attack objectives are built on.
///
/// All reductions run left to right over indices so that results are
/// bit-reproducible regardless of thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qfa/errors.hpp"

namespace qfa {

/// Fixed-length real vector produced by a text or image encoder.
class Embedding {
 public:
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DimensionError("embedding must have dim >= 1");
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidArgumentError("embedding contains NaN or infinity");
    }
  }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

/// Binary selector over embedding dimensions.
class DimensionMask {
 public:
  explicit DimensionMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    if (bits_.empty()) throw DimensionError("mask must have dim >= 1");
    for (auto b : bits_) {
      if (b > 1) throw InvalidArgumentError("mask bits must be 0 or 1");
    }
  }

  static DimensionMask all_ones(std::size_t dim) {
    return DimensionMask(std::vector<std::uint8_t>(dim, 1));
  }

  std::size_t dim() const noexcept { return bits_.size(); }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  bool selected(std::size_t j) const { return bits_[j] != 0; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool empty() const noexcept { return count() == 0; }

  /// True when every bit set here is also set in `other`.
  bool subset_of(const DimensionMask& other) const {
    if (other.dim() != dim()) throw DimensionError("mask dimension mismatch");
    for (std::size_t j = 0; j < bits_.size(); ++j) {
      if (bits_[j] && !other.bits_[j]) return false;
    }
    return true;
  }

  friend bool operator==(const DimensionMask&, const DimensionMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

namespace detail {

inline void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DimensionError("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

inline double clamp_unit(double c) noexcept { return std::clamp(c, -1.0, 1.0); }

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_dim(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> v) noexcept {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double cosine(const Embedding& a, const Embedding& b) {
  detail::require_same_dim(a.dim(), b.dim());
  const double na = norm(a.values());
  const double nb = norm(b.values());
  if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine of a zero-norm vector");
  return detail::clamp_unit(dot(a.values(), b.values()) / (na * nb));
}

/// Cosine of (a ⊙ mask, b ⊙ mask).
inline double masked_cosine(const Embedding& a, const Embedding& b, const DimensionMask& mask) {
  detail::require_same_dim(a.dim(), b.dim());
  detail::require_same_dim(a.dim(), mask.dim());
  if (mask.empty()) throw EmptyMaskError("mask selects no dimensions");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    if (!mask.selected(j)) continue;
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("masked sub-vector has zero norm");
  return detail::clamp_unit(ab / (na * nb));
}

inline Embedding normalize(const Embedding& v) {
  const double n = norm(v.values());
  if (n == 0.0) throw DegenerateVectorError("cannot normalize a zero vector");
  std::vector<double> out(v.values().begin(), v.values().end());
  for (double& x : out) x /= n;
  return Embedding(std::move(out));
}

/// Element-wise a - b.
inline std::vector<double> difference(const Embedding& a, const Embedding& b) {
  detail::require_same_dim(a.dim(), b.dim());
  std::vector<double> out(a.dim());
  for (std::size_t j = 0; j < a.dim(); ++j) out[j] = a[j] - b[j];
  return out;
}

}  // namespace qfa
