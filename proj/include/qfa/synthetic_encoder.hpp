#pragma once

/// @file synthetic_encoder.hpp
/// Deterministic, differentiable stand-in for a CLIP text encoder.
///
/// Each code point c owns a pseudo-random direction charvec(c) derived from
/// splitmix64; a text embeds to the normalized, position-decayed sum
///   normalize( sum_p decay^p * charvec(text[p]) ).
/// Geometric decay keeps the encoder order sensitive.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "qfa/encoder.hpp"
#include "qfa/hash.hpp"
#include "qfa/text.hpp"

namespace qfa {

struct SyntheticEncoderConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 64;
  double decay = 0.95;

  void validate() const {
    if (dim < 2) throw InvalidArgumentError("synthetic encoder dim must be >= 2");
    if (!(decay > 0.0 && decay <= 1.0)) {
      throw InvalidArgumentError("synthetic encoder decay must lie in (0, 1]");
    }
  }
};

/// Component j of the direction assigned to code point `cp`, in [-1, 1).
inline double char_component(std::uint64_t seed, char32_t cp, std::size_t j) noexcept {
  const std::uint64_t key = seed ^ (static_cast<std::uint64_t>(cp) * kGoldenGamma) ^
                            (static_cast<std::uint64_t>(j) * kMixConstant1);
  return 2.0 * to_unit_interval(splitmix64(key)) - 1.0;
}

class SyntheticEncoder final : public EncoderBackend, public DifferentiableEncoder {
 public:
  explicit SyntheticEncoder(SyntheticEncoderConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const SyntheticEncoderConfig& config() const noexcept { return cfg_; }

  std::string id() const override {
    char decay[32];
    for (int precision = 6; precision <= 17; ++precision) {
      std::snprintf(decay, sizeof decay, "%.*g", precision, cfg_.decay);
      if (std::strtod(decay, nullptr) == cfg_.decay) break;
    }
    return "synthetic:seed=" + std::to_string(cfg_.seed) + ",dim=" + std::to_string(cfg_.dim) +
           ",decay=" + decay;
  }

  std::size_t dim() const override { return cfg_.dim; }

  Capabilities capabilities() const override { return {.supports_gradients = true, .supports_images = false}; }

  std::vector<Embedding> embed(std::span<const std::string> inputs, Modality modality) const override {
    if (modality != Modality::text) throw CapabilityError("synthetic encoder embeds text only");
    std::vector<Embedding> out;
    out.reserve(inputs.size());
    for (const auto& s : inputs) out.push_back(embed_code_points(text::decode_utf8(s)));
    return out;
  }

  const DifferentiableEncoder* differentiable() const override { return this; }

  Embedding embed_code_points(std::u32string_view text) const {
    if (text.empty()) throw EmptyInputError("cannot embed empty text");
    std::vector<double> acc(cfg_.dim, 0.0);
    accumulate(text, acc);
    return normalize(Embedding(std::move(acc)));
  }

  std::vector<double> char_vector(char32_t cp) const {
    std::vector<double> v(cfg_.dim);
    for (std::size_t j = 0; j < cfg_.dim; ++j) v[j] = char_component(cfg_.seed, cp, j);
    return v;
  }

  /// Requires the suffix rows to be on the simplex within 1e-6.
  RelaxedEmbedding embed_relaxed(std::u32string_view prefix,
                                 const RelaxedSuffix& suffix) const override {
    if (prefix.empty()) throw EmptyInputError("relaxed embedding needs a nonempty prefix");
    suffix.validate(1e-6);

    auto basis = std::make_shared<RelaxedEmbedding::Basis>();
    basis->dim = cfg_.dim;
    basis->char_vectors.reserve(suffix.width() * cfg_.dim);
    for (char32_t c : suffix.charset) {
      for (std::size_t j = 0; j < cfg_.dim; ++j) {
        basis->char_vectors.push_back(char_component(cfg_.seed, c, j));
      }
    }
    basis->slot_scale.resize(suffix.length);
    double w = 1.0;
    for (std::size_t p = 0; p < suffix.insert_position; ++p) w *= cfg_.decay;
    for (std::size_t l = 0; l < suffix.length; ++l) {
      basis->slot_scale[l] = w;
      w *= cfg_.decay;
    }

    std::vector<double> raw(cfg_.dim, 0.0);
    accumulate(prefix, raw);
    for (std::size_t l = 0; l < suffix.length; ++l) {
      const auto row = suffix.row(l);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (row[c] == 0.0) continue;
        const double scale = basis->slot_scale[l] * row[c];
        const double* v = basis->char_vectors.data() + c * cfg_.dim;
        for (std::size_t j = 0; j < cfg_.dim; ++j) raw[j] += scale * v[j];
      }
    }
    return RelaxedEmbedding(std::move(raw), std::move(basis));
  }

 private:
  void accumulate(std::u32string_view text, std::vector<double>& acc) const {
    double w = 1.0;
    for (char32_t c : text) {
      for (std::size_t j = 0; j < cfg_.dim; ++j) acc[j] += w * char_component(cfg_.seed, c, j);
      w *= cfg_.decay;
    }
  }

  SyntheticEncoderConfig cfg_;
};

}  // namespace qfa
