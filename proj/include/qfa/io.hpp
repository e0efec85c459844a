#pragma once

/// @file io.hpp
/// JSON and JSON Lines formats: attack results, configs, dimension masks,
/// sentence pairs, image embeddings, score records, reports and run
/// manifests.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfa/evaluation.hpp"
#include "qfa/hash.hpp"
#include "qfa/objectives.hpp"
#include "qfa/optimizers.hpp"

namespace qfa {

using nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgumentError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out << data;
}

/// FNV-1a-64 of a file's bytes, hex.
inline std::string file_hash(const std::filesystem::path& path) { return to_hex(Fnv1a64{}.update(read_file(path)).digest()); }

/// Calls fn(line_number, parsed_object) for every nonblank line.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgumentError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      fn(line_no, j);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
}

// ---------------------------------------------------------------- masks

inline json mask_to_json(const DimensionMask& mask) {
  return json{{"dim", mask.dim()}, {"bits", std::vector<int>(mask.bits().begin(), mask.bits().end())}};
}

inline DimensionMask mask_from_json(const json& j) {
  const auto dim = j.at("dim").get<std::size_t>();
  const auto bits = j.at("bits").get<std::vector<int>>();
  if (bits.size() != dim) throw DimensionError("mask bits length differs from dim");
  std::vector<std::uint8_t> out;
  out.reserve(bits.size());
  for (int b : bits) {
    if (b != 0 && b != 1) throw InvalidArgumentError("mask bits must be 0 or 1");
    out.push_back(static_cast<std::uint8_t>(b));
  }
  return DimensionMask(std::move(out));
}

/// Mask file: {"dim", "bits", "epsilon", "n", "selected", "vote_rule"}.
struct MaskFile {
  DimensionMask mask;
  double epsilon = 0.9;
  std::size_t n = 0;
  VoteRule rule = VoteRule::strict;
};

inline json mask_file_to_json(const MaskFile& f) {
  auto j = mask_to_json(f.mask);
  j["epsilon"] = f.epsilon;
  j["n"] = f.n;
  j["selected"] = f.mask.count();
  j["vote_rule"] = f.rule == VoteRule::strict ? "strict" : "at_least";
  return j;
}

inline MaskFile mask_file_from_json(const json& j) {
  MaskFile f{mask_from_json(j), j.at("epsilon").get<double>(), j.at("n").get<std::size_t>(), VoteRule::strict};
  if (j.contains("vote_rule") && j["vote_rule"] == "at_least") f.rule = VoteRule::at_least;
  return f;
}

inline MaskFile load_mask_file(const std::filesystem::path& path) {
  try {
    return mask_file_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

// --------------------------------------------------------- sentence pairs

/// JSON Lines of {"with_target": ..., "without_target": ...}.
inline std::vector<SentencePair> load_sentence_pairs(const std::filesystem::path& path) {
  std::vector<SentencePair> pairs;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    if (!j.is_object() || !j.contains("with_target") || !j.contains("without_target")) {
      throw InvalidArgumentError("expected {\"with_target\", \"without_target\"}");
    }
    pairs.emplace_back(Prompt(j["with_target"].get<std::string>()), Prompt(j["without_target"].get<std::string>()));
  });
  if (pairs.empty()) throw EmptyInputError(path.string() + " contains no sentence pairs");
  return pairs;
}

// ------------------------------------------------------- image embeddings

struct ImageEmbedding {
  std::string image_id;
  Embedding embedding;
};

/// JSON Lines of {"image_id", "dim", "values"}.
inline std::vector<ImageEmbedding> load_image_embeddings(const std::filesystem::path& path) {
  std::vector<ImageEmbedding> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != j.at("dim").get<std::size_t>()) throw DimensionError("values length differs from dim");
    out.push_back({j.at("image_id").get<std::string>(), Embedding(std::move(values))});
  });
  return out;
}

inline std::string image_embedding_line(const ImageEmbedding& e) {
  return json{{"image_id", e.image_id},
              {"dim", e.embedding.dim()},
              {"values", std::vector<double>(e.embedding.values().begin(), e.embedding.values().end())}}
      .dump();
}

// ---------------------------------------------------------- attack config

inline json config_to_json(const AttackConfig& c) {
  return json{
      {"method", to_string(c.method)},
      {"L", c.length},
      {"charset", c.charset.to_utf8()},
      {"seed", c.seed},
      {"genetic",
       {{"generations", c.genetic.generations},
        {"population", c.genetic.population},
        {"mutation_rate", c.genetic.mutation_rate}}},
      {"pgd", {{"step_size", c.pgd.step_size}, {"steps", c.pgd.steps}}},
      {"targeted", c.targeted ? mask_to_json(*c.targeted) : json(nullptr)},
      {"target_phrase", c.target_phrase ? json(*c.target_phrase) : json(nullptr)},
      {"greedy_mode", to_string(c.greedy_mode)},
      {"brute_cap", c.brute_cap},
  };
}

inline AttackConfig config_from_json(const json& j) {
  AttackConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.length = j.at("L").get<std::size_t>();
  c.charset = Charset::parse(j.at("charset").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.genetic.generations = j.at("genetic").at("generations").get<std::size_t>();
  c.genetic.population = j.at("genetic").at("population").get<std::size_t>();
  c.genetic.mutation_rate = j.at("genetic").at("mutation_rate").get<double>();
  c.pgd.step_size = j.at("pgd").at("step_size").get<double>();
  c.pgd.steps = j.at("pgd").at("steps").get<std::size_t>();
  if (j.contains("targeted") && !j["targeted"].is_null()) c.targeted = mask_from_json(j["targeted"]);
  if (j.contains("target_phrase") && !j["target_phrase"].is_null()) c.target_phrase = j["target_phrase"].get<std::string>();
  if (j.contains("greedy_mode")) c.greedy_mode = parse_greedy_mode(j["greedy_mode"].get<std::string>());
  if (j.contains("brute_cap")) c.brute_cap = j["brute_cap"].get<std::uint64_t>();
  c.validate();
  return c;
}

// ---------------------------------------------------------- run manifest

struct RunManifest {
  std::vector<std::string> command_line;
  json config = json::object();
  std::string backend_id;
  std::map<std::string, std::string> input_hashes;  ///< path -> FNV-1a-64 hex
  std::string tool_version;
  std::string timestamp;  ///< UTC, ISO 8601
};

inline json manifest_to_json(const RunManifest& m) {
  return json{{"command_line", m.command_line}, {"config", m.config},         {"backend_id", m.backend_id},
              {"input_hashes", m.input_hashes}, {"tool_version", m.tool_version}, {"timestamp", m.timestamp}};
}

// ---------------------------------------------------------- attack result

inline json result_to_json(const AttackResult& r, const std::optional<RunManifest>& manifest = std::nullopt) {
  json traj = json::array();
  for (const auto& p : r.trajectory) traj.push_back({{"iteration", p.iteration}, {"best_loss", p.best_loss}});
  json j{{"base_prompt", r.base_prompt.text()},
         {"perturbation", r.perturbation.to_utf8()},
         {"perturbed_prompt", r.perturbed_prompt.text()},
         {"final_loss", r.final_loss},
         {"trajectory", std::move(traj)},
         {"evaluations", r.evaluations},
         {"config", config_to_json(r.config)},
         {"wall_ms", r.wall_ms}};
  if (manifest) j["manifest"] = manifest_to_json(*manifest);
  return j;
}

inline AttackResult result_from_json(const json& j) {
  AttackResult r{Prompt(j.at("base_prompt").get<std::string>()),
                 Perturbation::from_utf8(j.at("perturbation").get<std::string>()),
                 Prompt(j.at("perturbed_prompt").get<std::string>()),
                 j.at("final_loss").get<double>(),
                 {},
                 j.at("evaluations").get<std::size_t>(),
                 config_from_json(j.at("config")),
                 j.value("wall_ms", std::int64_t{0})};
  for (const auto& p : j.at("trajectory")) {
    r.trajectory.push_back({p.at("iteration").get<std::size_t>(), p.at("best_loss").get<double>()});
  }
  if (!(r.perturbed_prompt == assemble(r.base_prompt, r.perturbation))) {
    throw InvalidArgumentError("perturbed_prompt is not base_prompt + perturbation");
  }
  return r;
}

// ---------------------------------------------------------- score records

inline json record_to_json(const ScoreRecord& r) {
  return json{{"prompt_id", r.prompt_id},
              {"image_id", r.image_id},
              {"score", r.score},
              {"condition", to_string(r.condition)},
              {"setting", to_string(r.setting)}};
}

inline ScoreRecord record_from_json(const json& j) {
  ScoreRecord r{j.at("prompt_id").get<std::string>(), j.at("image_id").get<std::string>(), j.at("score").get<double>(),
                parse_condition(j.at("condition").get<std::string>()), parse_setting(j.at("setting").get<std::string>())};
  r.validate();
  return r;
}

inline std::vector<ScoreRecord> load_score_records(const std::filesystem::path& path) {
  std::vector<ScoreRecord> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) { out.push_back(record_from_json(j)); });
  return out;
}

// ---------------------------------------------------------------- reports

inline json report_to_json(const AggregateReport& report, const std::optional<RunManifest>& manifest = std::nullopt) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"setting", to_string(c.setting)},
                     {"condition", to_string(c.condition)},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"count", c.count}});
  }
  json j{{"cells", std::move(cells)}};
  if (manifest) j["manifest"] = manifest_to_json(*manifest);
  return j;
}

inline AggregateReport report_from_json(const json& j) {
  AggregateReport report;
  for (const auto& c : j.at("cells")) {
    report.cells.push_back({parse_setting(c.at("setting").get<std::string>()),
                            parse_condition(c.at("condition").get<std::string>()), c.at("mean").get<double>(),
                            c.at("std").get<double>(), c.at("count").get<std::size_t>()});
  }
  return report;
}

// ---------------------------------------------------------------- prompts

/// One prompt per line; blank lines and lines starting with '#' skipped.
inline std::vector<Prompt> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgumentError("cannot open " + path.string());
  std::vector<Prompt> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.emplace_back(line);
  }
  return out;
}

}  // namespace qfa
