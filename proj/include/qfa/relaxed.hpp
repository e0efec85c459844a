#pragma once

/// @file relaxed.hpp
/// Continuous relaxation of a character suffix: each slot holds a point on
/// the probability simplex over the charset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qfa/embedding.hpp"
#include "qfa/errors.hpp"

namespace qfa {

struct RelaxedSuffix {
  std::size_t length = 0;            ///< L, number of slots
  std::vector<char32_t> charset;     ///< C, column order of `weights`
  std::vector<double> weights;       ///< row-major L x |C|
  std::size_t insert_position = 0;   ///< character index of the first suffix slot

  static RelaxedSuffix uniform(std::size_t length, std::vector<char32_t> charset,
                               std::size_t insert_position) {
    RelaxedSuffix s;
    s.length = length;
    s.insert_position = insert_position;
    const double w = 1.0 / static_cast<double>(charset.size());
    s.weights.assign(length * charset.size(), w);
    s.charset = std::move(charset);
    return s;
  }

  /// Rows are one-hot on the given charset indices.
  static RelaxedSuffix one_hot(std::span<const std::size_t> choice, std::vector<char32_t> charset,
                               std::size_t insert_position) {
    RelaxedSuffix s;
    s.length = choice.size();
    s.insert_position = insert_position;
    s.weights.assign(choice.size() * charset.size(), 0.0);
    for (std::size_t l = 0; l < choice.size(); ++l) s.weights[l * charset.size() + choice[l]] = 1.0;
    s.charset = std::move(charset);
    return s;
  }

  std::size_t width() const noexcept { return charset.size(); }

  std::span<double> row(std::size_t l) { return {weights.data() + l * width(), width()}; }
  std::span<const double> row(std::size_t l) const { return {weights.data() + l * width(), width()}; }

  /// Throws SimplexError if any row leaves the simplex by more than `tol`.
  void validate(double tol) const {
    if (charset.empty()) throw InvalidArgumentError("relaxed suffix has an empty charset");
    if (weights.size() != length * width()) {
      throw DimensionError("relaxed suffix weights are not L x |C|");
    }
    for (std::size_t l = 0; l < length; ++l) {
      double sum = 0.0;
      for (double w : row(l)) {
        if (!(w >= -tol)) throw SimplexError("negative weight in slot " + std::to_string(l));
        sum += w;
      }
      if (std::abs(sum - 1.0) > tol) {
        throw SimplexError("slot " + std::to_string(l) + " weights sum to " + std::to_string(sum));
      }
    }
  }
};

/// Euclidean projection of `v` onto the probability simplex (sort-based).
inline void project_to_simplex(std::span<double> v) {
  if (v.empty()) return;
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

/// Embedding of a prefix plus relaxed suffix, with the pullback needed for
/// gradients with respect to the suffix weights.
///
/// The encoder output is normalize(raw) with raw affine in the weights:
///   raw = prefix_sum + sum_l slot_scale[l] * sum_c w[l,c] * basis[c].
class RelaxedEmbedding {
 public:
  /// Per-suffix data shared by evaluations: one basis vector per charset
  /// entry and the positional scale of each slot.
  struct Basis {
    std::size_t dim = 0;
    std::vector<double> char_vectors;  ///< row-major |C| x dim
    std::vector<double> slot_scale;    ///< length L
  };

  RelaxedEmbedding(std::vector<double> raw, std::shared_ptr<const Basis> basis)
      : raw_(std::move(raw)), basis_(std::move(basis)), embedding_(normalized(raw_, raw_norm_)) {}

  const Embedding& embedding() const noexcept { return embedding_; }

  /// Maps dLoss/dEmbedding to dLoss/dWeights (row-major L x |C|).
  std::vector<double> pullback(std::span<const double> grad_output) const {
    const std::size_t dim = basis_->dim;
    detail::require_same_dim(grad_output.size(), dim);
    // d normalize(r) / dr = (I - y y^T) / |r|
    const auto y = embedding_.values();
    const double gy = dot(grad_output, y);
    std::vector<double> grad_raw(dim);
    for (std::size_t j = 0; j < dim; ++j) grad_raw[j] = (grad_output[j] - gy * y[j]) / raw_norm_;

    const std::size_t width = basis_->char_vectors.size() / dim;
    const std::size_t length = basis_->slot_scale.size();
    std::vector<double> char_dots(width);
    for (std::size_t c = 0; c < width; ++c) {
      char_dots[c] = dot(std::span<const double>(basis_->char_vectors.data() + c * dim, dim), grad_raw);
    }
    std::vector<double> out(length * width);
    for (std::size_t l = 0; l < length; ++l) {
      for (std::size_t c = 0; c < width; ++c) out[l * width + c] = basis_->slot_scale[l] * char_dots[c];
    }
    return out;
  }

 private:
  static Embedding normalized(const std::vector<double>& raw, double& raw_norm) {
    raw_norm = norm(raw);
    if (raw_norm == 0.0) throw DegenerateVectorError("relaxed embedding has zero norm");
    std::vector<double> y(raw);
    for (double& x : y) x /= raw_norm;
    return Embedding(std::move(y));
  }

  std::vector<double> raw_;
  double raw_norm_ = 0.0;
  std::shared_ptr<const Basis> basis_;
  Embedding embedding_;
};

}  // namespace qfa
