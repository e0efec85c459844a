// qfattack: query-free adversarial suffixes against text encoders.
//
// Subcommands: attack, brute, baseline, keydims, eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qfa/qfa.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SharedOptions {
  std::string backend = "synthetic";
  std::uint64_t seed = 0;
  std::string charset = "default";
  std::size_t length = 5;
  bool cache = true;
  std::string cache_dir;
  unsigned jobs = 1;
  std::string out;
  std::string config;
};

struct AttackOptions {
  std::string prompt;
  std::string prompts_file;
  std::string method = "genetic";
  std::size_t generations = 50;
  std::size_t population = 20;
  double mutation_rate = 0.3;
  double step_size = 0.1;
  std::size_t steps = 100;
  std::string greedy_mode = "sequential";
  std::string mask_file;
  std::string pairs_file;
  double epsilon = 0.9;
  std::string vote_rule = "strict";
  std::string target;
  std::uint64_t brute_cap = 1'000'000;
  std::size_t count = 1;
};

struct EvalOptions {
  std::string results_dir;
  std::string image_embeds;
  std::string images_dir;
  std::string endpoint;
  std::string scores_file;
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Owns the configured backend stack: base encoder plus optional cache.
class BackendStack {
 public:
  BackendStack(const std::string& backend, const SharedOptions& shared) {
    if (backend.rfind("remote:", 0) == 0) {
      base_ = std::make_unique<qfa::RemoteEncoder>(qfa::RemoteEncoderConfig{.endpoint = backend.substr(7)});
    } else if (backend == "synthetic" || backend.rfind("synthetic:", 0) == 0) {
      base_ = std::make_unique<qfa::SyntheticEncoder>(parse_synthetic(backend));
    } else {
      throw UsageError("--backend must be 'synthetic[:seed=S,dim=D,decay=R]' or 'remote:URL', got '" + backend + "'");
    }
    if (shared.cache) {
      fs::path dir = "qf-cache";
      if (const char* env = std::getenv("QF_CACHE_DIR"); env && *env) dir = env;
      if (!shared.cache_dir.empty()) dir = shared.cache_dir;
      cached_ = std::make_unique<qfa::CachedEncoder>(*base_, dir);
    }
  }

  const qfa::EncoderBackend& get() const {
    return cached_ ? static_cast<const qfa::EncoderBackend&>(*cached_) : *base_;
  }

 private:
  static qfa::SyntheticEncoderConfig parse_synthetic(const std::string& backend) {
    qfa::SyntheticEncoderConfig cfg;
    if (backend.size() <= 10) return cfg;
    std::istringstream in(backend.substr(10));
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw UsageError("bad synthetic backend option '" + item + "'");
      const auto key = item.substr(0, eq);
      const auto value = item.substr(eq + 1);
      try {
        if (key == "seed") {
          cfg.seed = std::stoull(value);
        } else if (key == "dim") {
          cfg.dim = std::stoul(value);
        } else if (key == "decay") {
          cfg.decay = std::stod(value);
        } else {
          throw UsageError("unknown synthetic backend option '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw UsageError("bad value for synthetic backend option '" + key + "'");
      }
    }
    try {
      cfg.validate();
    } catch (const qfa::Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

  std::unique_ptr<qfa::EncoderBackend> base_;
  std::unique_ptr<qfa::CachedEncoder> cached_;
};

/// Splices `--config FILE` entries into argv. Flags on the command line
/// win; config keys are flag names without the leading dashes.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  json cfg;
  try {
    cfg = json::parse(qfa::read_file(path));
  } catch (const std::exception& e) {
    throw UsageError("cannot read --config " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("--config must hold a JSON object");

  auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0 || a == "--no-" + key;
    });
  };
  std::vector<std::string> extra;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "config" || given(key)) continue;
    if (value.is_boolean()) {
      extra.push_back(value.get<bool>() ? "--" + key : "--no-" + key);
    } else if (value.is_string()) {
      extra.push_back("--" + key);
      extra.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      extra.push_back("--" + key);
      extra.push_back(value.dump());
    } else {
      throw UsageError("--config key '" + key + "' must be a string, number or boolean");
    }
  }
  // Insert right after the subcommand name.
  const std::size_t at = std::min<std::size_t>(2, args.size());
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
  return args;
}

void add_shared(CLI::App* cmd, SharedOptions& s) {
  cmd->add_option("--backend", s.backend, "synthetic[:seed=S,dim=D,decay=R] or remote:URL");
  cmd->add_option("--seed", s.seed, "RNG seed");
  cmd->add_option("--charset", s.charset, "'default' (printable ASCII) or a literal character list");
  cmd->add_option("--len", s.length, "perturbation length")->check(CLI::PositiveNumber);
  cmd->add_flag("--cache,!--no-cache", s.cache, "use the on-disk embedding cache (default on)");
  cmd->add_option("--cache-dir", s.cache_dir, "cache directory (default $QF_CACHE_DIR or ./qf-cache)");
  cmd->add_option("--jobs", s.jobs, "worker threads for loss evaluation")->check(CLI::PositiveNumber);
  cmd->add_option("--out", s.out, "output path");
  cmd->add_option("--config", s.config, "JSON file of flag defaults");
}

void add_attack_flags(CLI::App* cmd, AttackOptions& a, bool with_method) {
  cmd->add_option("--prompt", a.prompt, "base prompt");
  cmd->add_option("--prompts", a.prompts_file, "file of prompts, one per line; --out becomes a directory");
  if (with_method) {
    cmd->add_option("--method", a.method, "greedy | genetic | pgd | random | brute")
        ->check(CLI::IsMember({"greedy", "genetic", "pgd", "random", "brute"}));
  }
  cmd->add_option("--generations", a.generations, "genetic: generations")->check(CLI::PositiveNumber);
  cmd->add_option("--population", a.population, "genetic: population size")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--mutation-rate", a.mutation_rate, "genetic: per-slot mutation probability")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--step-size", a.step_size, "pgd: step size")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", a.steps, "pgd: steps")->check(CLI::PositiveNumber);
  cmd->add_option("--greedy-mode", a.greedy_mode, "sequential | independent")
      ->check(CLI::IsMember({"sequential", "independent"}));
  cmd->add_option("--mask", a.mask_file, "targeted: dimension mask file");
  cmd->add_option("--pairs", a.pairs_file, "targeted: sentence-pair JSONL to derive the mask from");
  cmd->add_option("--epsilon", a.epsilon, "targeted: vote threshold in (0,1)");
  cmd->add_option("--vote-rule", a.vote_rule, "strict (>) or at_least (>=)")
      ->check(CLI::IsMember({"strict", "at_least"}));
  cmd->add_option("--target", a.target, "targeted: phrase scored as 'This is a photo of <phrase>'");
  cmd->add_option("--brute-cap", a.brute_cap, "largest search space brute force accepts");
}

qfa::VoteRule vote_rule(const std::string& s) { return s == "at_least" ? qfa::VoteRule::at_least : qfa::VoteRule::strict; }

qfa::RunManifest make_manifest(const std::vector<std::string>& argv, json config, const std::string& backend_id,
                               const std::vector<std::string>& inputs) {
  qfa::RunManifest m;
  m.command_line = argv;
  m.config = std::move(config);
  m.backend_id = backend_id;
  for (const auto& in : inputs) {
    if (!in.empty()) m.input_hashes[in] = qfa::file_hash(in);
  }
  m.tool_version = qfa::kVersion;
  m.timestamp = utc_timestamp();
  return m;
}

void emit(const std::string& out, const json& j) {
  const auto text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    qfa::write_file(out, text);
  }
}

qfa::Charset parse_charset(const std::string& value) {
  try {
    return qfa::Charset::parse(value);
  } catch (const qfa::Error& e) {
    throw UsageError(std::string("--charset: ") + e.what());
  }
}

int run_attack_like(qfa::Method method, const SharedOptions& shared, const AttackOptions& a,
                    const std::vector<std::string>& argv) {
  if (a.prompt.empty() == a.prompts_file.empty()) throw UsageError("give exactly one of --prompt or --prompts");
  if (!a.target.empty() && a.mask_file.empty() && a.pairs_file.empty()) {
    throw UsageError("--target needs --mask or --pairs");
  }
  if (!a.mask_file.empty() && !a.pairs_file.empty()) throw UsageError("--mask and --pairs are mutually exclusive");
  if (!(a.epsilon > 0.0 && a.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");
  if (!a.prompts_file.empty() && shared.out.empty()) throw UsageError("--prompts needs --out DIR");
  if (a.count > 1 && shared.out.empty()) throw UsageError("--count > 1 needs --out DIR");

  qfa::AttackConfig cfg;
  cfg.method = method;
  cfg.length = shared.length;
  cfg.charset = parse_charset(shared.charset);
  cfg.seed = shared.seed;
  cfg.genetic = {a.generations, a.population, a.mutation_rate};
  cfg.pgd = {a.step_size, a.steps};
  cfg.greedy_mode = qfa::parse_greedy_mode(a.greedy_mode);
  cfg.brute_cap = a.brute_cap;
  if (!a.target.empty()) cfg.target_phrase = a.target;
  try {
    cfg.validate();
  } catch (const qfa::Error& e) {
    throw UsageError(e.what());
  }

  BackendStack stack(shared.backend, shared);
  const auto& backend = stack.get();
  if (method == qfa::Method::pgd && !backend.capabilities().supports_gradients) {
    throw qfa::CapabilityError("pgd requires a backend with gradients; " + shared.backend + " does not provide them");
  }
  if (!a.mask_file.empty()) {
    cfg.targeted = qfa::load_mask_file(a.mask_file).mask;
  } else if (!a.pairs_file.empty()) {
    const auto pairs = qfa::load_sentence_pairs(a.pairs_file);
    cfg.targeted = qfa::extract_key_dims(qfa::difference_vectors(pairs, backend), a.epsilon, vote_rule(a.vote_rule));
  }
  if (cfg.targeted && cfg.targeted->empty()) {
    throw qfa::EmptyMaskError("the key-dimension mask selects no dimensions; lower --epsilon or add pairs");
  }

  std::vector<qfa::Prompt> prompts;
  if (!a.prompt.empty()) {
    try {
      prompts.emplace_back(a.prompt);
    } catch (const qfa::Error& e) {
      throw UsageError(std::string("--prompt: ") + e.what());
    }
  } else {
    prompts = qfa::load_prompts(a.prompts_file);
    if (prompts.empty()) throw qfa::EmptyInputError(a.prompts_file + " contains no prompts");
  }

  const auto manifest = make_manifest(argv, qfa::config_to_json(cfg), backend.id(),
                                      {a.mask_file, a.pairs_file, a.prompts_file});
  const bool to_dir = prompts.size() > 1 || a.count > 1 || !a.prompts_file.empty();
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t k = 0; k < a.count; ++k) {
      auto run_cfg = cfg;
      run_cfg.seed = cfg.seed + k;
      const auto objective = qfa::make_objective(backend, prompts[p], run_cfg);
      const auto result = qfa::run_attack(prompts[p], objective, run_cfg, {.jobs = shared.jobs});
      std::string out = shared.out;
      if (to_dir) {
        char name[64];
        std::snprintf(name, sizeof name, "p%03zu-%s-s%llu.json", p, qfa::to_string(method),
                      static_cast<unsigned long long>(run_cfg.seed));
        out = (fs::path(shared.out) / name).string();
      }
      emit(out, qfa::result_to_json(result, manifest));
      if (!out.empty()) {
        std::cerr << out << ": " << result.perturbation.to_utf8() << " loss " << result.final_loss << '\n';
      }
    }
  }
  return 0;
}

int run_keydims(const SharedOptions& shared, const AttackOptions& a, const std::vector<std::string>& argv) {
  if (a.pairs_file.empty()) throw UsageError("keydims needs --pairs");
  if (!(a.epsilon > 0.0 && a.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");
  BackendStack stack(shared.backend, shared);
  const auto& backend = stack.get();
  const auto pairs = qfa::load_sentence_pairs(a.pairs_file);
  const auto rule = vote_rule(a.vote_rule);
  qfa::MaskFile file{qfa::extract_key_dims(qfa::difference_vectors(pairs, backend), a.epsilon, rule), a.epsilon,
                     pairs.size(), rule};
  if (file.mask.empty()) std::cerr << "warning: no dimension passed the vote; the mask is empty\n";
  auto j = qfa::mask_file_to_json(file);
  j["manifest"] = qfa::manifest_to_json(make_manifest(
      argv, json{{"epsilon", a.epsilon}, {"vote_rule", a.vote_rule}, {"n", pairs.size()}}, backend.id(), {a.pairs_file}));
  emit(shared.out, j);
  return 0;
}

qfa::Condition condition_for(qfa::Method m) {
  switch (m) {
    case qfa::Method::greedy: return qfa::Condition::greedy;
    case qfa::Method::genetic: return qfa::Condition::genetic;
    case qfa::Method::pgd: return qfa::Condition::pgd;
    case qfa::Method::random: return qfa::Condition::random;
    case qfa::Method::brute: break;
  }
  throw qfa::InvalidArgumentError("brute-force results are not an evaluation condition");
}

std::vector<qfa::ImageEmbedding> embed_image_dir(const std::string& dir, const qfa::RemoteEncoder& remote) {
  std::vector<std::string> ids;
  std::vector<std::string> payloads;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto rel = fs::relative(f, dir);
    rel.replace_extension();
    ids.push_back(rel.generic_string());
    payloads.push_back(qfa::read_file(f));
  }
  const auto embs = remote.embed(payloads, qfa::Modality::image);
  std::vector<qfa::ImageEmbedding> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], embs[i]});
  return out;
}

/// Image ids "<result-stem>/<n>" score the perturbed generation under the
/// result's method; "<result-stem>/clean/<n>" score the unperturbed prompt
/// (no_attack).
int run_eval(const SharedOptions& shared, const EvalOptions& e, const std::vector<std::string>& argv) {
  if (shared.out.empty()) throw UsageError("eval needs --out DIR");
  std::vector<qfa::ScoreRecord> records;
  std::string backend_id;
  std::vector<std::string> inputs;

  if (!e.scores_file.empty()) {
    if (!e.results_dir.empty()) throw UsageError("--scores and --results are mutually exclusive");
    records = qfa::load_score_records(e.scores_file);
    inputs.push_back(e.scores_file);
  } else {
    if (e.results_dir.empty()) throw UsageError("eval needs --results DIR or --scores FILE");
    if (e.image_embeds.empty() == e.images_dir.empty()) throw UsageError("give exactly one of --image-embeds or --images");
    if (!e.images_dir.empty() && e.endpoint.empty()) throw UsageError("--images needs --endpoint");
    if (!fs::is_directory(e.results_dir)) throw UsageError("--results must be a directory");

    std::vector<fs::path> result_files;
    for (const auto& entry : fs::directory_iterator(e.results_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") result_files.push_back(entry.path());
    }
    std::sort(result_files.begin(), result_files.end());
    if (result_files.empty()) throw qfa::EmptyInputError("no result files in " + e.results_dir);

    const std::string text_backend = e.endpoint.empty() ? shared.backend : "remote:" + e.endpoint;
    BackendStack stack(text_backend, shared);
    const auto& backend = stack.get();
    backend_id = backend.id();

    std::vector<qfa::ImageEmbedding> images;
    std::string image_source;
    if (!e.image_embeds.empty()) {
      images = qfa::load_image_embeddings(e.image_embeds);
      image_source = e.image_embeds;
      inputs.push_back(e.image_embeds);
    } else {
      images = embed_image_dir(e.images_dir, qfa::RemoteEncoder({.endpoint = e.endpoint}));
      image_source = "remote:" + e.endpoint + " (" + e.images_dir + ")";
    }

    for (const auto& file : result_files) {
      const auto result = qfa::result_from_json(json::parse(qfa::read_file(file)));
      const auto stem = file.stem().string();
      const auto setting = result.config.targeted ? qfa::Setting::targeted : qfa::Setting::untargeted;
      std::string text = result.base_prompt.text();
      if (setting == qfa::Setting::targeted) {
        if (!result.config.target_phrase) {
          throw qfa::InvalidArgumentError(file.string() + ": targeted result lacks target_phrase");
        }
        text = qfa::targeted_eval_text(*result.config.target_phrase).text();
      }
      const auto text_emb = backend.embed_text(text);
      const auto attacked = condition_for(result.config.method);
      for (const auto& img : images) {
        if (img.image_id.rfind(stem + "/", 0) != 0) continue;
        if (img.embedding.dim() != text_emb.dim()) {
          throw qfa::DimensionError("text embedding from " + backend.id() + " has dim " +
                                    std::to_string(text_emb.dim()) + " but image '" + img.image_id + "' from " +
                                    image_source + " has dim " + std::to_string(img.embedding.dim()));
        }
        const bool clean = img.image_id.rfind(stem + "/clean/", 0) == 0;
        records.push_back({result.base_prompt.text(), img.image_id, qfa::clip_score(text_emb, img.embedding),
                           clean ? qfa::Condition::no_attack : attacked, setting});
      }
      inputs.push_back(file.string());
    }
  }
  if (records.empty()) throw qfa::EmptyInputError("no score records: no image ids matched any result file");

  const auto report = qfa::aggregate(records);
  const auto manifest = make_manifest(argv, json{{"results", e.results_dir}, {"scores", e.scores_file}},
                                      backend_id, inputs);
  const fs::path out(shared.out);
  qfa::write_file(out / "report.json", qfa::report_to_json(report, manifest).dump(2) + "\n");
  qfa::write_file(out / "report.csv", qfa::report_to_csv(report));
  std::string lines;
  for (const auto& r : records) lines += qfa::record_to_json(r).dump() + "\n";
  qfa::write_file(out / "scores.jsonl", lines);
  std::cout << qfa::report_to_csv(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = merge_config(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"Query-free adversarial prompt perturbations against text encoders"};
  app.name("qfattack");
  app.require_subcommand(1);
  app.set_version_flag("--version", qfa::kVersion);

  SharedOptions shared;
  AttackOptions attack;
  EvalOptions eval;

  auto* attack_cmd = app.add_subcommand("attack", "run an attack and write an AttackResult JSON");
  add_shared(attack_cmd, shared);
  add_attack_flags(attack_cmd, attack, true);

  auto* brute_cmd = app.add_subcommand("brute", "exhaustive search (small spaces only)");
  add_shared(brute_cmd, shared);
  add_attack_flags(brute_cmd, attack, false);

  auto* baseline_cmd = app.add_subcommand("baseline", "random-suffix baseline");
  add_shared(baseline_cmd, shared);
  add_attack_flags(baseline_cmd, attack, false);
  baseline_cmd->add_option("--count", attack.count, "number of seeds (seed, seed+1, ...)")->check(CLI::PositiveNumber);

  auto* keydims_cmd = app.add_subcommand("keydims", "extract steerable key dimensions from sentence pairs");
  add_shared(keydims_cmd, shared);
  keydims_cmd->add_option("--pairs", attack.pairs_file, "sentence-pair JSONL")->required();
  keydims_cmd->add_option("--epsilon", attack.epsilon, "vote threshold in (0,1)");
  keydims_cmd->add_option("--vote-rule", attack.vote_rule, "strict (>) or at_least (>=)")
      ->check(CLI::IsMember({"strict", "at_least"}));

  auto* eval_cmd = app.add_subcommand("eval", "CLIP-score aggregation over attack results");
  add_shared(eval_cmd, shared);
  eval_cmd->add_option("--results", eval.results_dir, "directory of AttackResult JSON files");
  eval_cmd->add_option("--image-embeds", eval.image_embeds, "JSONL of precomputed image embeddings");
  eval_cmd->add_option("--images", eval.images_dir, "directory of image files embedded via --endpoint");
  eval_cmd->add_option("--endpoint", eval.endpoint, "embedding service URL for text and images");
  eval_cmd->add_option("--scores", eval.scores_file, "re-aggregate a previously written scores.jsonl");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (attack_cmd->parsed()) return run_attack_like(qfa::parse_method(attack.method), shared, attack, args);
    if (brute_cmd->parsed()) return run_attack_like(qfa::Method::brute, shared, attack, args);
    if (baseline_cmd->parsed()) return run_attack_like(qfa::Method::random, shared, attack, args);
    if (keydims_cmd->parsed()) return run_keydims(shared, attack, args);
    if (eval_cmd->parsed()) return run_eval(shared, eval, args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
