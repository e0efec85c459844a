#pragma once

/// @file perturbation.hpp
/// Character sets, suffix perturbations, prompt assembly and the uniformly
/// random baseline perturbation.

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "qfa/errors.hpp"
#include "qfa/hash.hpp"
#include "qfa/text.hpp"

namespace qfa {

/// Ordered set of candidate characters. No duplicates, no whitespace.
class Charset {
 public:
  explicit Charset(std::u32string chars) : chars_(std::move(chars)) {
    if (chars_.empty()) throw InvalidArgumentError("charset must not be empty");
    std::unordered_set<char32_t> seen;
    for (char32_t c : chars_) {
      if (text::is_space(c)) throw InvalidArgumentError("charset must not contain whitespace");
      if (!seen.insert(c).second) throw InvalidArgumentError("charset contains duplicate characters");
    }
  }

  /// Printable ASCII without space, 0x21 through 0x7E.
  static Charset printable_ascii() {
    std::u32string chars;
    for (char32_t c = 0x21; c <= 0x7E; ++c) chars.push_back(c);
    return Charset(std::move(chars));
  }

  /// "default" or a literal UTF-8 string of characters.
  static Charset parse(const std::string& value) {
    if (value == "default") return printable_ascii();
    return Charset(text::decode_utf8(value));
  }

  std::size_t size() const noexcept { return chars_.size(); }
  char32_t operator[](std::size_t i) const { return chars_[i]; }
  const std::u32string& chars() const noexcept { return chars_; }
  std::vector<char32_t> to_vector() const { return {chars_.begin(), chars_.end()}; }

  bool contains(char32_t c) const noexcept { return chars_.find(c) != std::u32string::npos; }
  bool contains_all(std::u32string_view s) const noexcept {
    return std::all_of(s.begin(), s.end(), [&](char32_t c) { return contains(c); });
  }

  std::string to_utf8() const { return text::encode_utf8(chars_); }

  friend bool operator==(const Charset&, const Charset&) = default;

 private:
  std::u32string chars_;
};

/// Nonempty text without leading or trailing whitespace.
class Prompt {
 public:
  explicit Prompt(std::string text) : text_(std::move(text)) {
    const auto cps = text::decode_utf8(text_);
    if (cps.empty()) throw InvalidArgumentError("prompt must not be empty");
    if (text::is_space(cps.front()) || text::is_space(cps.back())) {
      throw InvalidArgumentError("prompt must not start or end with whitespace");
    }
    length_ = cps.size();
  }

  const std::string& text() const noexcept { return text_; }
  /// Length in code points.
  std::size_t length() const noexcept { return length_; }

  friend bool operator==(const Prompt& a, const Prompt& b) { return a.text_ == b.text_; }

 private:
  std::string text_;
  std::size_t length_ = 0;
};

/// Characters appended to a prompt as a single extra word.
class Perturbation {
 public:
  explicit Perturbation(std::u32string chars) : chars_(std::move(chars)) {
    if (chars_.empty()) throw InvalidArgumentError("perturbation must not be empty");
    for (char32_t c : chars_) {
      if (text::is_space(c)) throw InvalidArgumentError("perturbation must not contain whitespace");
    }
  }

  static Perturbation from_utf8(const std::string& s) { return Perturbation(text::decode_utf8(s)); }

  std::size_t length() const noexcept { return chars_.size(); }
  const std::u32string& chars() const noexcept { return chars_; }
  std::string to_utf8() const { return text::encode_utf8(chars_); }

  friend bool operator==(const Perturbation&, const Perturbation&) = default;

 private:
  std::u32string chars_;
};

/// Text of `base` followed by one space and the perturbation.
inline std::string assembled_text(const Prompt& base, std::u32string_view suffix) {
  std::string out = base.text();
  out.push_back(' ');
  for (char32_t c : suffix) text::append_utf8(out, c);
  return out;
}

inline Prompt assemble(const Prompt& base, const Perturbation& pert) {
  return Prompt(assembled_text(base, pert.chars()));
}

/// L characters drawn i.i.d. uniformly from `charset` by a splitmix64 stream
/// seeded with `seed`.
inline Perturbation random_perturbation(std::uint64_t seed, const Charset& charset, std::size_t length) {
  if (length < 1) throw InvalidArgumentError("perturbation length must be >= 1");
  SplitMix64 rng(seed);
  std::u32string out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(charset[rng.below(charset.size())]);
  return Perturbation(std::move(out));
}

}  // namespace qfa
