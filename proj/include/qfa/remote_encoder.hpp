#pragma once

/// @file remote_encoder.hpp
/// HTTP client for an embedding service speaking the /v1/embed protocol:
///
///   POST {endpoint}/v1/embed  {"modality": "text"|"image", "inputs": [...]}
///   200 -> {"dim": int, "model": string, "embeddings": [[...], ...]}
///   4xx/5xx -> {"error": string}
///   GET {endpoint}/healthz -> {"status": "ok", "model": ..., "dim": ...}
///
/// Image inputs travel base64-encoded.

#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "qfa/encoder.hpp"

namespace qfa {

struct RemoteEncoderConfig {
  std::string endpoint;  ///< e.g. http://127.0.0.1:8080 or http://host/prefix
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{100};
  std::chrono::seconds timeout{60};
};

struct ServiceInfo {
  std::string model;
  std::size_t dim = 0;
};

class RemoteEncoder final : public EncoderBackend {
 public:
  explicit RemoteEncoder(RemoteEncoderConfig cfg) : cfg_(std::move(cfg)) {
    split_endpoint(cfg_.endpoint, origin_, path_prefix_);
  }

  const std::string& endpoint() const noexcept { return cfg_.endpoint; }

  std::string id() const override { return "remote:" + cfg_.endpoint + "#" + info().model; }
  std::size_t dim() const override { return info().dim; }
  Capabilities capabilities() const override { return {.supports_gradients = false, .supports_images = true}; }

  std::vector<Embedding> embed(std::span<const std::string> inputs, Modality modality) const override {
    nlohmann::json body;
    body["modality"] = to_string(modality);
    auto& arr = body["inputs"] = nlohmann::json::array();
    for (const auto& in : inputs) {
      arr.push_back(modality == Modality::image ? httplib::detail::base64_encode(in) : in);
    }
    const auto response = send_with_retry([&](httplib::Client& cli) {
      return cli.Post(path_prefix_ + "/v1/embed", body.dump(), "application/json");
    });
    return parse_embed_response(response, inputs.size());
  }

  /// Reads /healthz once and caches the answer.
  const ServiceInfo& info() const {
    std::lock_guard lock(info_mutex_);
    if (!info_) {
      const auto body = send_with_retry([&](httplib::Client& cli) { return cli.Get(path_prefix_ + "/healthz"); });
      try {
        const auto j = nlohmann::json::parse(body);
        info_ = ServiceInfo{j.at("model").get<std::string>(), j.at("dim").get<std::size_t>()};
      } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed healthz response: ") + e.what());
      }
      if (info_->dim == 0) throw ProtocolError("service reported dim 0");
    }
    return *info_;
  }

  /// Validates a /v1/embed success body. Exposed for tests.
  static std::vector<Embedding> parse_embed_response(const std::string& body, std::size_t expected) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_unsigned() ||
        !j.contains("embeddings") || !j["embeddings"].is_array()) {
      throw ProtocolError("response lacks dim/embeddings");
    }
    const auto dim = j["dim"].get<std::size_t>();
    const auto& embs = j["embeddings"];
    if (embs.size() != expected) {
      throw ProtocolError("expected " + std::to_string(expected) + " embeddings, got " +
                          std::to_string(embs.size()));
    }
    std::vector<Embedding> out;
    out.reserve(expected);
    for (const auto& e : embs) {
      if (!e.is_array() || e.size() != dim) throw ProtocolError("embedding length differs from dim");
      std::vector<double> values;
      values.reserve(dim);
      for (const auto& x : e) {
        if (!x.is_number()) throw ProtocolError("non-numeric embedding entry");
        values.push_back(x.get<double>());
      }
      try {
        out.emplace_back(std::move(values));
      } catch (const Error& err) {
        throw ProtocolError(std::string("invalid embedding: ") + err.what());
      }
    }
    return out;
  }

 private:
  static void split_endpoint(const std::string& endpoint, std::string& origin, std::string& prefix) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) throw InvalidArgumentError("endpoint must be an http(s) URL: " + endpoint);
    const auto slash = endpoint.find('/', scheme + 3);
    origin = endpoint.substr(0, slash);
    prefix = slash == std::string::npos ? "" : endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  }

  template <class Request>
  std::string send_with_retry(Request&& request) const {
    auto backoff = cfg_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client cli(origin_);
      cli.set_connection_timeout(cfg_.timeout);
      cli.set_read_timeout(cfg_.timeout);
      cli.set_write_timeout(cfg_.timeout);
      auto res = request(cli);
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 400) {
        std::string message = res->body;
        try {
          const auto j = nlohmann::json::parse(res->body);
          if (j.is_object() && j.contains("error") && j["error"].is_string()) message = j["error"];
        } catch (const nlohmann::json::exception&) {
        }
        throw RemoteError(res->status, message);
      }
      return res->body;
    }
    throw TransportError("request to " + cfg_.endpoint + " failed after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

  RemoteEncoderConfig cfg_;
  std::string origin_;
  std::string path_prefix_;
  mutable std::mutex info_mutex_;
  mutable std::optional<ServiceInfo> info_;
};

}  // namespace qfa
