#pragma once

/// @file embedding_cache.hpp
/// Persistent content-addressed embedding cache layered over any backend.
///
/// One JSON file per entry, named by the FNV-1a-64 of
/// (backend id, 0x00, modality byte, input bytes). Each file stores the full
/// input so hash collisions are detected on read.

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "qfa/encoder.hpp"
#include "qfa/hash.hpp"

namespace qfa {

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

inline std::string cache_key(std::string_view backend_id, Modality modality, std::string_view input) {
  Fnv1a64 h;
  h.update(backend_id).update_byte(0x00).update_byte(static_cast<unsigned char>(modality)).update(input);
  return to_hex(h.digest());
}

class CachedEncoder final : public EncoderBackend {
 public:
  CachedEncoder(const EncoderBackend& inner, std::filesystem::path dir, bool enabled = true,
                WarningSink warn = warn_to_stderr)
      : inner_(inner), dir_(std::move(dir)), enabled_(enabled), warn_(std::move(warn)) {
    if (!enabled_) return;
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) disable("cache directory " + dir_.string() + " unusable");
  }

  std::string id() const override { return inner_.id(); }
  std::size_t dim() const override { return inner_.dim(); }
  Capabilities capabilities() const override { return inner_.capabilities(); }
  const DifferentiableEncoder* differentiable() const override { return inner_.differentiable(); }

  bool enabled() const noexcept { return enabled_.load(); }
  const std::filesystem::path& directory() const noexcept { return dir_; }

  std::vector<Embedding> embed(std::span<const std::string> inputs, Modality modality) const override {
    if (!enabled_) return inner_.embed(inputs, modality);
    const std::string backend_id = inner_.id();

    std::vector<std::optional<Embedding>> found(inputs.size());
    // Repeated inputs within one batch are sent to the backend once.
    std::vector<std::string> missing;
    std::vector<std::vector<std::size_t>> missing_at;
    std::unordered_map<std::string_view, std::size_t> slot_of;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (auto it = slot_of.find(inputs[i]); it != slot_of.end()) {
        missing_at[it->second].push_back(i);
        continue;
      }
      found[i] = load(backend_id, modality, inputs[i]);
      if (!found[i]) {
        slot_of.emplace(inputs[i], missing.size());
        missing.push_back(inputs[i]);
        missing_at.push_back({i});
      }
    }
    if (!missing.empty()) {
      auto fresh = inner_.embed(missing, modality);
      if (fresh.size() != missing.size()) throw ProtocolError("backend returned the wrong number of embeddings");
      for (std::size_t k = 0; k < fresh.size(); ++k) {
        store(backend_id, modality, missing[k], fresh[k]);
        for (std::size_t i : missing_at[k]) found[i] = fresh[k];
      }
    }
    std::vector<Embedding> out;
    out.reserve(inputs.size());
    for (auto& e : found) out.push_back(std::move(*e));
    return out;
  }

 private:
  std::filesystem::path entry_path(const std::string& key) const { return dir_ / (key + ".json"); }

  std::mutex& lock_for(const std::string& key) const {
    return stripes_[std::hash<std::string>{}(key) % stripes_.size()];
  }

  static std::string stored_input(Modality modality, const std::string& input) {
    return modality == Modality::image ? httplib::detail::base64_encode(input) : input;
  }

  std::optional<Embedding> load(const std::string& backend_id, Modality modality, const std::string& input) const {
    const auto key = cache_key(backend_id, modality, input);
    const auto path = entry_path(key);
    std::lock_guard lock(lock_for(key));
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.at("backend_id").get<std::string>() != backend_id || j.at("modality").get<std::string>() != to_string(modality) ||
          j.at("input").get<std::string>() != stored_input(modality, input)) {
        return std::nullopt;  // hash collision; the fresh value overwrites it
      }
      auto values = j.at("values").get<std::vector<double>>();
      if (values.size() != j.at("dim").get<std::size_t>()) throw ProtocolError("dim does not match values");
      return Embedding(std::move(values));
    } catch (const std::exception& e) {
      in.close();
      std::error_code ec;
      std::filesystem::remove(path, ec);
      warn_("evicted corrupt cache entry " + path.string() + ": " + e.what());
      return std::nullopt;
    }
  }

  void store(const std::string& backend_id, Modality modality, const std::string& input, const Embedding& e) const {
    if (!enabled_) return;
    const auto key = cache_key(backend_id, modality, input);
    const auto path = entry_path(key);
    nlohmann::json j;
    j["backend_id"] = backend_id;
    j["modality"] = to_string(modality);
    j["input"] = stored_input(modality, input);
    j["dim"] = e.dim();
    j["values"] = std::vector<double>(e.values().begin(), e.values().end());

    std::lock_guard lock(lock_for(key));
    std::ostringstream tmp_name;
    tmp_name << key << ".tmp." << std::this_thread::get_id();
    const auto tmp = dir_ / tmp_name.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << j.dump();
      if (!out) {
        disable("cannot write cache entry in " + dir_.string());
        return;
      }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      disable("cannot write cache entry in " + dir_.string());
    }
  }

  void disable(const std::string& why) const {
    if (enabled_.exchange(false)) warn_(why + "; continuing without cache");
  }

  const EncoderBackend& inner_;
  std::filesystem::path dir_;
  mutable std::atomic<bool> enabled_;
  WarningSink warn_;
  mutable std::array<std::mutex, 64> stripes_;
};

/// Embeds `text` through the cache layer.
inline Embedding cached_embed(const CachedEncoder& cache, const std::string& text) { return cache.embed_text(text); }

}  // namespace qfa
