#pragma once

// Shared test fixtures: mock backends, independent oracles, temp dirs.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "qfa/qfa.hpp"

namespace qfa::testing {

/// Synthetic encoder that counts how many inputs it embedded.
class CountingBackend final : public EncoderBackend {
 public:
  explicit CountingBackend(std::string id = "counting", SyntheticEncoderConfig cfg = {})
      : id_(std::move(id)), inner_(cfg) {}

  std::string id() const override { return id_; }
  std::size_t dim() const override { return inner_.dim(); }
  Capabilities capabilities() const override { return inner_.capabilities(); }
  const DifferentiableEncoder* differentiable() const override { return &inner_; }

  std::vector<Embedding> embed(std::span<const std::string> inputs, Modality m) const override {
    calls_ += inputs.size();
    return inner_.embed(inputs, m);
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::string id_;
  SyntheticEncoder inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Fixed-vector backend: maps known texts to given embeddings.
class TableBackend final : public EncoderBackend {
 public:
  explicit TableBackend(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
  std::string id() const override { return "table"; }
  std::size_t dim() const override { return table_.begin()->second.size(); }
  Capabilities capabilities() const override { return {}; }
  std::vector<Embedding> embed(std::span<const std::string> inputs, Modality) const override {
    std::vector<Embedding> out;
    for (const auto& s : inputs) out.emplace_back(table_.at(s));
    return out;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
};

/// Closed-form relaxed-suffix loss written directly from the encoder
/// definition; shares only the per-character primitive with the library.
class RelaxedLossOracle {
 public:
  RelaxedLossOracle(const SyntheticEncoderConfig& cfg, const std::u32string& prefix, const std::u32string& charset,
                    std::size_t length, const Embedding& base, std::optional<DimensionMask> mask = std::nullopt)
      : cfg_(cfg), charset_(charset), length_(length), base_(base.values().begin(), base.values().end()),
        mask_(std::move(mask)) {
    prefix_sum_.assign(cfg.dim, 0.0);
    double w = 1.0;
    for (char32_t c : prefix) {
      for (std::size_t j = 0; j < cfg.dim; ++j) prefix_sum_[j] += w * char_component(cfg.seed, c, j);
      w *= cfg.decay;
    }
    for (std::size_t l = 0; l < length; ++l) {
      slot_weight_.push_back(w);
      w *= cfg.decay;
    }
    for (char32_t c : charset) {
      std::vector<double> v(cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) v[j] = char_component(cfg.seed, c, j);
      basis_.push_back(std::move(v));
    }
  }

  double operator()(const std::vector<double>& weights) const {
    std::vector<double> e = prefix_sum_;
    for (std::size_t l = 0; l < length_; ++l) {
      for (std::size_t c = 0; c < charset_.size(); ++c) {
        const double s = slot_weight_[l] * weights[l * charset_.size() + c];
        for (std::size_t j = 0; j < cfg_.dim; ++j) e[j] += s * basis_[c][j];
      }
    }
    // cosine is scale invariant, so normalizing e is unnecessary here
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < cfg_.dim; ++j) {
      if (mask_ && !mask_->selected(j)) continue;
      ab += base_[j] * e[j];
      aa += base_[j] * base_[j];
      bb += e[j] * e[j];
    }
    return ab / std::sqrt(aa * bb);
  }

  /// Central finite differences with step h.
  std::vector<double> gradient(std::vector<double> weights, double h) const {
    std::vector<double> g(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const double keep = weights[i];
      weights[i] = keep + h;
      const double up = (*this)(weights);
      weights[i] = keep - h;
      const double down = (*this)(weights);
      weights[i] = keep;
      g[i] = (up - down) / (2 * h);
    }
    return g;
  }

 private:
  SyntheticEncoderConfig cfg_;
  std::u32string charset_;
  std::size_t length_;
  std::vector<double> base_;
  std::optional<DimensionMask> mask_;
  std::vector<double> prefix_sum_;
  std::vector<double> slot_weight_;
  std::vector<std::vector<double>> basis_;
};

/// Uniform random point of the simplex per row (normalized exponentials).
inline std::vector<double> random_simplex_rows(std::mt19937_64& rng, std::size_t rows, std::size_t width) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(rows * width);
  for (std::size_t l = 0; l < rows; ++l) {
    double sum = 0;
    for (std::size_t c = 0; c < width; ++c) sum += (w[l * width + c] = expo(rng));
    for (std::size_t c = 0; c < width; ++c) w[l * width + c] /= sum;
  }
  return w;
}

/// max_i |a_i - b_i| / max_i |b_i|
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& reference) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - reference[i]));
    scale = std::max(scale, std::abs(reference[i]));
  }
  return diff / scale;
}

/// Removes the directory on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("qfa-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

/// Runs the CLI with the given arguments, capturing stdout and stderr.
inline CliRun run_cli(const std::vector<std::string>& args, const std::filesystem::path& scratch) {
  std::string cmd = shell_quote(QFA_CLI_PATH);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  const auto out = scratch / "cli.stdout";
  const auto err = scratch / "cli.stderr";
  cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

}  // namespace qfa::testing
