// Remote client against an in-process mock of the embedding service.

#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"

namespace qfa {
namespace {

std::string base64_decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  unsigned buffer = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    buffer = (buffer << 6) | static_cast<unsigned>(alphabet.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buffer >> bits) & 0xFF));
    }
  }
  return out;
}

/// Serves the wire protocol with the synthetic encoder; image payloads are
/// embedded as text after base64 decoding. "/broken" and "/failing"
/// prefixes answer with malformed and error bodies.
class MockService {
 public:
  MockService() {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok","model":"mock-synthetic","dim":64})", "application/json");
    });
    server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = nlohmann::json::parse(req.body);
      if (body.at("modality") != "text" && body.at("modality") != "image") {
        res.status = 400;
        res.set_content(R"({"error":"unknown modality"})", "application/json");
        return;
      }
      if (body.at("inputs").empty()) {
        res.status = 400;
        res.set_content(R"({"error":"empty inputs"})", "application/json");
        return;
      }
      nlohmann::json out{{"dim", 64}, {"model", "mock-synthetic"}, {"embeddings", nlohmann::json::array()}};
      for (const auto& in : body["inputs"]) {
        auto text = in.get<std::string>();
        if (body["modality"] == "image") text = image_stand_in(base64_decode(text));
        const auto e = encoder_.embed_text(text);
        out["embeddings"].push_back(std::vector<double>(e.values().begin(), e.values().end()));
      }
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/broken/v1/embed", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"dim": 3, "embeddings": [[1, 2]]})", "application/json");
    });
    server_.Post("/failing/v1/embed", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content(R"({"error":"model exploded"})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockService() {
    server_.stop();
    thread_.join();
  }

  /// Images are arbitrary bytes; the mock embeds a digest of them instead.
  static std::string image_stand_in(const std::string& bytes) { return to_hex(Fnv1a64{}.update(bytes).digest()); }

  std::string url(const std::string& prefix = "") const { return "http://127.0.0.1:" + std::to_string(port_) + prefix; }
  int requests() const { return requests_.load(); }

 private:
  httplib::Server server_;
  SyntheticEncoder encoder_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> requests_{0};
};

TEST(RemoteEncoder, ShapeAndInfo) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url()});
  EXPECT_EQ(remote.dim(), 64u);
  EXPECT_EQ(remote.id(), "remote:" + service.url() + "#mock-synthetic");
  EXPECT_FALSE(remote.capabilities().supports_gradients);
  EXPECT_EQ(remote.differentiable(), nullptr);
  const auto e = remote.embed_text("hello");
  EXPECT_EQ(e.dim(), 64u);
}

TEST(RemoteEncoder, DuplicatesAreBitIdenticalAndOrderPreserved) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url()});
  SyntheticEncoder local;
  const std::vector<std::string> dup{"a", "a"};
  const auto d = remote.embed(dup, Modality::text);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0], d[1]);

  const std::vector<std::string> batch{"first prompt", "second", "third one here"};
  const auto out = remote.embed(batch, Modality::text);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(out[i], local.embed_text(batch[i])) << i;
}

TEST(RemoteEncoder, ImagesTravelBase64) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url()});
  const std::vector<std::string> payloads{std::string("\x89PNG\r\n\x1a\n", 8) + "fake", "jpeg bytes"};
  const auto out = remote.embed(payloads, Modality::image);
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out[i], SyntheticEncoder().embed_text(MockService::image_stand_in(payloads[i])));
  }
}

TEST(RemoteEncoder, ServiceErrorCarriesMessage) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url("/failing")});
  try {
    remote.embed_text("x");
    FAIL() << "expected RemoteError";
  } catch (const RemoteError& e) {
    EXPECT_EQ(e.status(), 500);
    EXPECT_EQ(e.service_message(), "model exploded");
  }
  RemoteEncoder plain({.endpoint = service.url()});
  const std::vector<std::string> none;
  EXPECT_THROW(plain.embed(none, Modality::text), RemoteError);
}

TEST(RemoteEncoder, MalformedResponseIsProtocolError) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url("/broken")});
  EXPECT_THROW(remote.embed_text("x"), ProtocolError);
  EXPECT_THROW(RemoteEncoder::parse_embed_response("not json", 1), ProtocolError);
  EXPECT_THROW(RemoteEncoder::parse_embed_response(R"({"dim":2,"embeddings":[[1,0]]})", 2), ProtocolError);
  EXPECT_THROW(RemoteEncoder::parse_embed_response(R"({"dim":2,"embeddings":[[1,"x"]]})", 1), ProtocolError);
  EXPECT_EQ(RemoteEncoder::parse_embed_response(R"({"dim":2,"model":"m","embeddings":[[1,0]]})", 1).size(), 1u);
}

TEST(RemoteEncoder, UnreachableEndpointRetriesThenFails) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }  // closed: nothing listens there now
  RemoteEncoder remote({.endpoint = "http://127.0.0.1:" + std::to_string(port),
                        .max_retries = 2,
                        .initial_backoff = std::chrono::milliseconds(5),
                        .timeout = std::chrono::seconds(2)});
  const auto start = std::chrono::steady_clock::now();
  try {
    remote.embed_text("x");
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos);
  }
  // backoff 5 ms then 10 ms
  EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(15));
}

TEST(RemoteEncoder, WorksBehindCache) {
  MockService service;
  testing::TempDir dir;
  RemoteEncoder remote({.endpoint = service.url()});
  CachedEncoder cache(remote, dir.path());
  const auto a = cached_embed(cache, "cached text");
  const int after_first = service.requests();
  EXPECT_EQ(cached_embed(cache, "cached text"), a);
  EXPECT_EQ(service.requests(), after_first);
}

TEST(RemoteEncoder, PgdIsRejected) {
  MockService service;
  RemoteEncoder remote({.endpoint = service.url()});
  const Prompt base("a cat");
  AttackConfig cfg;
  cfg.method = Method::pgd;
  EXPECT_THROW(pgd_attack(base, Objective::untargeted(remote, base), cfg), CapabilityError);
}

}  // namespace
}  // namespace qfa
