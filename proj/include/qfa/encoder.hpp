#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qfa/embedding.hpp"
#include "qfa/relaxed.hpp"

namespace qfa {

enum class Modality : unsigned char { text = 0, image = 1 };

inline const char* to_string(Modality m) noexcept { return m == Modality::text ? "text" : "image"; }

struct Capabilities {
  bool supports_gradients = false;
  bool supports_images = false;
};

/// Encoders that can embed a relaxed (row-stochastic) suffix and
/// backpropagate through it.
class DifferentiableEncoder {
 public:
  virtual ~DifferentiableEncoder() = default;
  virtual RelaxedEmbedding embed_relaxed(std::u32string_view prefix,
                                         const RelaxedSuffix& suffix) const = 0;
};

/// The embedding oracle. Implementations must be deterministic per id()
/// and safe to call from several threads at once.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  /// Identifies backend, model and configuration. Used as cache namespace.
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Capabilities capabilities() const = 0;

  /// One embedding per input, in order. Image inputs are raw file bytes.
  virtual std::vector<Embedding> embed(std::span<const std::string> inputs,
                                       Modality modality) const = 0;

  /// Non-null iff capabilities().supports_gradients.
  virtual const DifferentiableEncoder* differentiable() const { return nullptr; }

  Embedding embed_text(const std::string& text) const {
    auto out = embed(std::span<const std::string>(&text, 1), Modality::text);
    return std::move(out.front());
  }
};

}  // namespace qfa
