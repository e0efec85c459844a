// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "support.hpp"

using namespace qfa;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << id << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<Prompt> corpus() { return load_prompts(QFA_DATA_DIR "/prompts.txt"); }

void oracle_equivalence() {
  const auto t0 = Clock::now();
  SyntheticEncoder enc;
  const Prompt base("a young man riding a bicycle");
  AttackConfig cfg;
  cfg.charset = Charset::parse("abc");
  cfg.length = 2;
  const auto objective = make_objective(enc, base, cfg);
  cfg.method = Method::genetic;
  const auto ga = run_attack(base, objective, cfg);
  cfg.method = Method::brute;
  const auto bf = run_attack(base, objective, cfg);
  const double dt = seconds_since(t0);
  const bool ok = ga.perturbation == bf.perturbation && ga.final_loss == bf.final_loss && dt < 1.0;
  report("P1", ok,
         "genetic '" + ga.perturbation.to_utf8() + "' vs brute '" + bf.perturbation.to_utf8() + "', loss " +
             fmt("%.17g", ga.final_loss) + " vs " + fmt("%.17g", bf.final_loss) + ", " + fmt("%.3f s", dt));
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  SyntheticEncoder enc;
  const SyntheticEncoderConfig cfg;
  const auto charset = Charset::printable_ascii().to_vector();
  const std::u32string chars(charset.begin(), charset.end());
  double worst = 0.0;
  std::mt19937_64 rng(20240101);
  for (const char* text : {"a young man riding a bicycle", "a cat sleeping on a sofa", "a snowy mountain at sunrise"}) {
    const Prompt base(text);
    const auto prefix = text::decode_utf8(base.text() + " ");
    const auto objective = Objective::untargeted(enc, base);
    testing::RelaxedLossOracle oracle(cfg, prefix, chars, 5, objective.base_embedding());
    for (int t = 0; t < 10; ++t) {
      RelaxedSuffix s;
      s.length = 5;
      s.charset = charset;
      s.insert_position = prefix.size();
      s.weights = testing::random_simplex_rows(rng, 5, chars.size());
      const auto r = enc.embed_relaxed(prefix, s);
      const auto analytic = r.pullback(objective.gradient(r.embedding()));
      worst = std::max(worst, testing::relative_error(analytic, oracle.gradient(s.weights, 1e-5)));
    }
  }
  const double dt = seconds_since(t0);
  report("P2", worst < 1e-5 && dt < 5.0,
         "max relative error " + fmt("%.3e", worst) + " over 30 points, " + fmt("%.3f s", dt));
}

void full_mask_reduction() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  const auto ones = DimensionMask::all_ones(64);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(64), b(64);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    worst = std::max(worst, std::abs(masked_cosine(Embedding(a), Embedding(b), ones) - cosine(Embedding(a), Embedding(b))));
  }
  SyntheticEncoder enc;
  for (const auto& p : corpus()) {
    const Prompt cand(p.text() + " x!7q");
    worst = std::max(worst, std::abs(targeted_loss(p, cand, ones, enc) - untargeted_loss(p, cand, enc)));
  }
  report("P3", worst <= 1e-12, "max |targeted - untargeted| " + fmt("%.3e", worst) + " over 100 pairs + 20 prompts");
}

void key_dimension_vote() {
  const std::vector<Embedding> planted{Embedding({1, 2, -1}), Embedding({2, -1, -3}), Embedding({1, 1, -2})};
  const auto mask = extract_key_dims(planted, 0.5);
  const bool planted_ok = mask == DimensionMask({1, 0, 1});

  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  std::uniform_int_distribution<int> count(1, 12);
  int monotone_violations = 0, scaling_violations = 0;
  const std::vector<double> eps{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  for (int t = 0; t < 50; ++t) {
    std::vector<Embedding> diffs, scaled;
    const int k = count(rng);
    for (int i = 0; i < k; ++i) {
      std::vector<double> v(32);
      for (auto& x : v) x = std::round(n(rng) * 2.0) / 2.0;  // exact zeros occur
      if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v[0] = 1.0;
      diffs.emplace_back(v);
      const double s = scale(rng);
      for (auto& x : v) x *= s;
      scaled.emplace_back(v);
    }
    for (std::size_t e = 0; e + 1 < eps.size(); ++e) {
      if (!extract_key_dims(diffs, eps[e + 1]).subset_of(extract_key_dims(diffs, eps[e]))) ++monotone_violations;
    }
    for (double e : eps) {
      if (!(extract_key_dims(diffs, e) == extract_key_dims(scaled, e))) ++scaling_violations;
    }
  }
  report("P4", planted_ok && monotone_violations == 0 && scaling_violations == 0,
         std::string("planted mask ") + (planted_ok ? "(1,0,1)" : "wrong") + ", monotonicity violations " +
             std::to_string(monotone_violations) + ", scaling violations " + std::to_string(scaling_violations) +
             " over 50 diff-sets");
}

void directional_effectiveness() {
  const auto t0 = Clock::now();
  SyntheticEncoder enc;
  const auto prompts = corpus();
  double genetic = 0.0, greedy = 0.0, random = 0.0;
  for (const auto& p : prompts) {
    AttackConfig cfg;
    const auto objective = make_objective(enc, p, cfg);
    cfg.method = Method::genetic;
    genetic += run_attack(p, objective, cfg).final_loss;
    cfg.method = Method::greedy;
    greedy += run_attack(p, objective, cfg).final_loss;
    cfg.method = Method::random;
    for (std::uint64_t s = 0; s < 100; ++s) {
      cfg.seed = s;
      random += run_attack(p, objective, cfg).final_loss / 100.0;
    }
  }
  const double n = static_cast<double>(prompts.size());
  genetic /= n;
  greedy /= n;
  random /= n;
  const double dt = seconds_since(t0);
  report("P5", prompts.size() == 20 && genetic < random && greedy < random && dt < 60.0,
         "mean loss genetic " + fmt("%.6f", genetic) + ", greedy " + fmt("%.6f", greedy) + ", random " +
             fmt("%.6f", random) + " over " + std::to_string(prompts.size()) + " prompts, " + fmt("%.2f s", dt));
}

void determinism() {
  testing::TempDir dir;
  std::vector<std::string> outputs;
  bool ok = true;
  for (int k = 0; k < 2; ++k) {
    const auto r = testing::run_cli({"attack", "--prompt", "a young man riding a bicycle", "--seed", "3", "--cache-dir",
                                     (dir / "cache").string(), "--out", (dir / "result.json").string()},
                                    dir.path());
    ok = ok && r.exit_code == 0;
    auto j = json::parse(read_file(dir / "result.json"));
    j.erase("wall_ms");
    j["manifest"].erase("timestamp");
    outputs.push_back(j.dump());
  }
  ok = ok && outputs[0] == outputs[1];
  report("P6", ok, std::string("two CLI runs ") + (ok ? "byte-identical" : "differ") +
                       " excluding timestamp and wall_ms (" + std::to_string(outputs[0].size()) + " bytes)");
}

void hyperparameter_fidelity() {
  const auto j = config_to_json(AttackConfig{});
  const KeyDimConfig kd;
  const bool ok = j.at("L") == 5 && j.at("method") == "genetic" && j.at("genetic").at("generations") == 50 &&
                  j.at("genetic").at("population") == 20 && j.at("genetic").at("mutation_rate") == 0.3 &&
                  j.at("pgd").at("step_size") == 0.1 && j.at("pgd").at("steps") == 100 && kd.epsilon == 0.9;
  report("P7", ok, "defaults L=" + j.at("L").dump() + ", genetic " + j.at("genetic").dump() + ", pgd " +
                       j.at("pgd").dump() + ", epsilon " + fmt("%g", kd.epsilon));
}

void cache_correctness() {
  testing::TempDir dir;
  testing::CountingBackend counting;
  CachedEncoder cached(counting, dir / "cache");
  SyntheticEncoder plain;
  const std::vector<std::string> inputs{"a cat", "a cat", "a dog on a mat", "a cat"};
  bool identical = true;
  for (int round = 0; round < 3; ++round) {
    const auto on = cached.embed(inputs, Modality::text);
    const auto off = plain.embed(inputs, Modality::text);
    for (std::size_t i = 0; i < inputs.size(); ++i) identical = identical && on[i] == off[i];
  }
  // A second cache instance over the same directory must hit disk, not the backend.
  CachedEncoder reopened(counting, dir / "cache");
  const auto again = reopened.embed(inputs, Modality::text);
  identical = identical && again[0] == plain.embed_text("a cat");
  const bool ok = counting.calls() == 2 && identical;
  report("P8", ok, "backend calls " + std::to_string(counting.calls()) + " for 2 distinct inputs over 16 requests, " +
                       (identical ? "bit-identical" : "mismatched") + " with cache on vs off");
}

void trajectory_monotonicity() {
  SyntheticEncoder enc;
  std::size_t violations = 0, runs = 0, points = 0;
  for (const auto& p : corpus()) {
    for (Method m : {Method::greedy, Method::genetic, Method::pgd}) {
      AttackConfig cfg;
      cfg.method = m;
      cfg.seed = runs;
      const auto r = run_attack(p, make_objective(enc, p, cfg), cfg);
      for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
        if (r.trajectory[i].best_loss > r.trajectory[i - 1].best_loss) ++violations;
      }
      if (r.trajectory.empty() || r.trajectory.back().best_loss != r.final_loss) ++violations;
      points += r.trajectory.size();
      ++runs;
    }
  }
  report("P9", violations == 0 && runs == 60,
         std::to_string(violations) + " violations across " + std::to_string(runs) + " runs (" +
             std::to_string(points) + " trajectory points)");
}

}  // namespace

int main() {
  try {
    oracle_equivalence();
    gradient_correctness();
    full_mask_reduction();
    key_dimension_vote();
    directional_effectiveness();
    determinism();
    hyperparameter_fidelity();
    cache_correctness();
    trajectory_monotonicity();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
