#pragma once

/// @file objectives.hpp
/// Attack objectives over an encoder, and steerable key-dimension extraction.
///
/// Untargeted loss:  cos(enc(x), enc(x'))
/// Targeted loss:    cos(enc(x) ⊙ I, enc(x') ⊙ I)
/// where I marks the dimensions on which the difference vectors
/// d_i = enc(s_i) - enc(s_i') agree in sign beyond a threshold.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfa/embedding.hpp"
#include "qfa/encoder.hpp"
#include "qfa/perturbation.hpp"

namespace qfa {

/// A sentence with the target content and the same sentence without it.
class SentencePair {
 public:
  SentencePair(Prompt with_target, Prompt without_target)
      : with_(std::move(with_target)), without_(std::move(without_target)) {
    if (with_ == without_) throw InvalidArgumentError("sentence pair texts must differ");
  }

  const Prompt& with_target() const noexcept { return with_; }
  const Prompt& without_target() const noexcept { return without_; }

 private:
  Prompt with_;
  Prompt without_;
};

/// Comparison used by the vote: |sum sign| > eps*n (strict, default) or >=.
enum class VoteRule { strict, at_least };

struct KeyDimConfig {
  double epsilon = 0.9;
  VoteRule rule = VoteRule::strict;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgumentError("epsilon must lie in (0, 1)");
  }
};

inline double untargeted_loss(const Prompt& base, const Prompt& candidate, const EncoderBackend& backend) {
  return cosine(backend.embed_text(base.text()), backend.embed_text(candidate.text()));
}

inline double targeted_loss(const Prompt& base, const Prompt& candidate, const DimensionMask& mask,
                            const EncoderBackend& backend) {
  if (mask.empty()) throw EmptyMaskError("targeted loss needs a nonempty mask");
  return masked_cosine(backend.embed_text(base.text()), backend.embed_text(candidate.text()), mask);
}

/// d_i = enc(with_target_i) - enc(without_target_i), unnormalized, in order.
inline std::vector<Embedding> difference_vectors(std::span<const SentencePair> pairs, const EncoderBackend& backend) {
  if (pairs.empty()) throw EmptyInputError("no sentence pairs");
  std::vector<Embedding> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.emplace_back(difference(backend.embed_text(p.with_target().text()),
                                backend.embed_text(p.without_target().text())));
  }
  return out;
}

inline int sign(double x) noexcept { return (x > 0.0) - (x < 0.0); }

/// Bit j is set iff |sum_i sign(d_ij)| exceeds epsilon * n. sign(0) = 0.
/// An all-zero result is returned as is; callers check mask.empty().
inline DimensionMask extract_key_dims(std::span<const Embedding> diffs, double epsilon,
                                      VoteRule rule = VoteRule::strict) {
  if (diffs.empty()) throw EmptyInputError("no difference vectors");
  KeyDimConfig{epsilon, rule}.validate();
  const std::size_t dim = diffs.front().dim();
  for (const auto& d : diffs) detail::require_same_dim(d.dim(), dim);

  const double threshold = epsilon * static_cast<double>(diffs.size());
  std::vector<std::uint8_t> bits(dim, 0);
  for (std::size_t j = 0; j < dim; ++j) {
    long votes = 0;
    for (const auto& d : diffs) votes += sign(d[j]);
    const double margin = static_cast<double>(std::labs(votes));
    bits[j] = rule == VoteRule::strict ? margin > threshold : margin >= threshold;
  }
  return DimensionMask(std::move(bits));
}

/// The loss an attack minimizes: cosine between the base prompt's
/// embedding and a candidate's, optionally restricted to a mask.
/// Thread-safe if the backend is.
class Objective {
 public:
  static Objective untargeted(const EncoderBackend& backend, const Prompt& base) {
    return Objective(backend, base, std::nullopt);
  }

  static Objective targeted(const EncoderBackend& backend, const Prompt& base, DimensionMask mask) {
    if (mask.empty()) throw EmptyMaskError("targeted objective needs a nonempty mask");
    return Objective(backend, base, std::move(mask));
  }

  const EncoderBackend& backend() const noexcept { return *backend_; }
  const Prompt& base() const noexcept { return base_; }
  const Embedding& base_embedding() const noexcept { return base_embedding_; }
  const std::optional<DimensionMask>& mask() const noexcept { return mask_; }

  double operator()(const std::string& candidate_text) const {
    return on_embedding(backend_->embed_text(candidate_text));
  }

  double on_embedding(const Embedding& candidate) const {
    return mask_ ? masked_cosine(base_embedding_, candidate, *mask_) : cosine(base_embedding_, candidate);
  }

  /// d loss / d candidate.
  std::vector<double> gradient(const Embedding& candidate) const {
    detail::require_same_dim(candidate.dim(), base_embedding_.dim());
    const std::size_t dim = candidate.dim();
    auto keep = [&](std::size_t j) { return !mask_ || mask_->selected(j); };
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      if (!keep(j)) continue;
      ab += base_embedding_[j] * candidate[j];
      aa += base_embedding_[j] * base_embedding_[j];
      bb += candidate[j] * candidate[j];
    }
    const double na = std::sqrt(aa);
    const double nb = std::sqrt(bb);
    if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine gradient at a zero vector");
    const double c = ab / (na * nb);
    std::vector<double> g(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
      if (keep(j)) g[j] = base_embedding_[j] / (na * nb) - c * candidate[j] / bb;
    }
    return g;
  }

 private:
  Objective(const EncoderBackend& backend, const Prompt& base, std::optional<DimensionMask> mask)
      : backend_(&backend), base_(base), base_embedding_(backend.embed_text(base.text())), mask_(std::move(mask)) {
    if (mask_) detail::require_same_dim(mask_->dim(), base_embedding_.dim());
  }

  const EncoderBackend* backend_;
  Prompt base_;
  Embedding base_embedding_;
  std::optional<DimensionMask> mask_;
};

}  // namespace qfa
