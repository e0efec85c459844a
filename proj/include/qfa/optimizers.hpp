#pragma once

/// @file optimizers.hpp
/// Query-free attack methods. Each one searches the space of fixed-length
/// suffixes over a charset for the candidate prompt with the lowest loss.
///
///   greedy   slot-by-slot growth, argmin per slot
///   genetic  elitist GA: tournament(2), uniform crossover, per-slot mutation
///   pgd      projected gradient descent over row-stochastic relaxed suffixes
///   brute    exhaustive enumeration (verification oracle)
///   random   a single uniformly sampled suffix (baseline)
///
/// Every method is deterministic given the base prompt, the loss and the
/// config seed. Parallel evaluation never changes results.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "qfa/objectives.hpp"
#include "qfa/parallel.hpp"
#include "qfa/perturbation.hpp"
#include "qfa/relaxed.hpp"

namespace qfa {

enum class Method { greedy, genetic, pgd, random, brute };

/// How greedy spends its budget: grow the suffix one slot at a time, or
/// rank single characters once and concatenate the best L.
enum class GreedyMode { sequential, independent };

struct GeneticParams {
  std::size_t generations = 50;
  std::size_t population = 20;
  double mutation_rate = 0.3;
};

struct PgdParams {
  double step_size = 0.1;
  std::size_t steps = 100;
};

struct AttackConfig {
  Method method = Method::genetic;
  std::size_t length = 5;
  Charset charset = Charset::printable_ascii();
  std::uint64_t seed = 0;
  GeneticParams genetic;
  PgdParams pgd;
  std::optional<DimensionMask> targeted;
  std::optional<std::string> target_phrase;  ///< scored with "This is a photo of ..." in targeted evaluation
  GreedyMode greedy_mode = GreedyMode::sequential;
  std::uint64_t brute_cap = 1'000'000;

  void validate() const {
    if (length < 1) throw InvalidArgumentError("perturbation length must be >= 1");
    if (genetic.population < 2) throw InvalidArgumentError("population must be >= 2");
    if (genetic.generations < 1) throw InvalidArgumentError("generations must be >= 1");
    if (!(genetic.mutation_rate >= 0.0 && genetic.mutation_rate <= 1.0)) {
      throw InvalidArgumentError("mutation rate must lie in [0, 1]");
    }
    if (pgd.steps < 1) throw InvalidArgumentError("PGD steps must be >= 1");
    if (!(pgd.step_size > 0.0)) throw InvalidArgumentError("PGD step size must be > 0");
    if (targeted && targeted->empty()) throw EmptyMaskError("targeted mask selects no dimensions");
  }
};

struct TrajectoryPoint {
  std::size_t iteration = 0;
  double best_loss = 0.0;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct AttackResult {
  Prompt base_prompt;
  Perturbation perturbation;
  Prompt perturbed_prompt;
  double final_loss = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  std::size_t evaluations = 0;
  AttackConfig config;
  std::int64_t wall_ms = 0;
};

/// Loss of a full candidate prompt text. Must be thread-safe when jobs > 1.
using LossFn = std::function<double(const std::string&)>;

struct ExecutionOptions {
  unsigned jobs = 1;
};

/// Called after every PGD projection with the current relaxed suffix.
using PgdObserver = std::function<void(std::size_t step, const RelaxedSuffix&)>;

inline const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::greedy: return "greedy";
    case Method::genetic: return "genetic";
    case Method::pgd: return "pgd";
    case Method::random: return "random";
    case Method::brute: return "brute";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "greedy") return Method::greedy;
  if (s == "genetic") return Method::genetic;
  if (s == "pgd") return Method::pgd;
  if (s == "random") return Method::random;
  if (s == "brute") return Method::brute;
  throw InvalidArgumentError("unknown method: " + s);
}

inline const char* to_string(GreedyMode m) noexcept {
  return m == GreedyMode::sequential ? "sequential" : "independent";
}

inline GreedyMode parse_greedy_mode(const std::string& s) {
  if (s == "sequential") return GreedyMode::sequential;
  if (s == "independent") return GreedyMode::independent;
  throw InvalidArgumentError("unknown greedy mode: " + s);
}

/// |charset|^length, saturating at uint64 max.
inline std::uint64_t search_space_size(std::size_t charset_size, std::size_t length) noexcept {
  std::uint64_t size = 1;
  for (std::size_t i = 0; i < length; ++i) {
    if (size > std::numeric_limits<std::uint64_t>::max() / charset_size) return std::numeric_limits<std::uint64_t>::max();
    size *= charset_size;
  }
  return size;
}

namespace detail {

// Sub-stream roles: each RNG consumer seeds splitmix64 with seed ^ role.
inline constexpr std::uint64_t kGeneticInitRole = 0x6A09E667F3BCC908ULL;
inline constexpr std::uint64_t kGeneticEvolveRole = 0xBB67AE8584CAA73BULL;

/// Counts and memoizes loss evaluations for one attack run.
class Evaluator {
 public:
  Evaluator(const Prompt& base, const LossFn& loss, unsigned jobs, bool memoize = true)
      : base_(base), loss_(loss), jobs_(jobs), memoize_(memoize) {}

  std::vector<double> evaluate(const std::vector<std::u32string>& suffixes) {
    if (!memoize_) {
      std::vector<double> out(suffixes.size());
      parallel_for(suffixes.size(), jobs_, [&](std::size_t i) { out[i] = loss_(assembled_text(base_, suffixes[i])); });
      evaluations_ += suffixes.size();
      return out;
    }
    std::vector<std::u32string> pending;
    std::unordered_set<std::u32string> queued;
    for (const auto& s : suffixes) {
      if (!memo_.contains(s) && queued.insert(s).second) pending.push_back(s);
    }
    std::vector<double> fresh(pending.size());
    parallel_for(pending.size(), jobs_, [&](std::size_t i) { fresh[i] = loss_(assembled_text(base_, pending[i])); });
    evaluations_ += pending.size();
    for (std::size_t i = 0; i < pending.size(); ++i) memo_.emplace(pending[i], fresh[i]);
    std::vector<double> out;
    out.reserve(suffixes.size());
    for (const auto& s : suffixes) out.push_back(memo_.at(s));
    return out;
  }

  double evaluate(const std::u32string& suffix) { return evaluate(std::vector<std::u32string>{suffix}).front(); }

  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  const Prompt& base_;
  const LossFn& loss_;
  unsigned jobs_;
  bool memoize_;
  std::size_t evaluations_ = 0;
  std::unordered_map<std::u32string, double> memo_;
};

/// Tracks the best candidate seen; replaces it only on strict improvement.
struct BestSoFar {
  std::u32string suffix;
  double loss = std::numeric_limits<double>::infinity();

  bool offer(const std::u32string& s, double l) {
    if (l < loss) {
      suffix = s;
      loss = l;
      return true;
    }
    return false;
  }
};

inline AttackResult finish(const Prompt& base, const std::u32string& suffix, double loss,
                           std::vector<TrajectoryPoint> trajectory, std::size_t evaluations,
                           const AttackConfig& cfg, std::chrono::steady_clock::time_point start) {
  Perturbation pert(suffix);
  Prompt perturbed = assemble(base, pert);
  const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return AttackResult{base,   std::move(pert), std::move(perturbed), loss, std::move(trajectory),
                      evaluations, cfg, wall.count()};
}

}  // namespace detail

/// Sequential mode: at slot p try every charset character appended to the
/// p characters already fixed (later slots absent) and keep the argmin.
/// Ties go to the lowest code point. Costs exactly L * |C| evaluations.
///
/// Independent mode: rank single characters by their one-character loss
/// and concatenate the L best (cycling if |C| < L); |C| + 1 evaluations.
///
/// The trajectory is the running minimum over full-length candidates, which
/// only the last sweep produces.
inline AttackResult greedy_attack(const Prompt& base, const LossFn& loss, const AttackConfig& cfg,
                                  ExecutionOptions exec = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  detail::Evaluator eval(base, loss, exec.jobs);
  const auto& cs = cfg.charset;

  auto sweep = [&](const std::u32string& fixed) {
    std::vector<std::u32string> candidates;
    candidates.reserve(cs.size());
    for (char32_t c : cs.chars()) candidates.push_back(fixed + c);
    return eval.evaluate(candidates);
  };
  auto ranked_better = [&](std::size_t i, std::size_t k, const std::vector<double>& losses) {
    return losses[i] < losses[k] || (losses[i] == losses[k] && cs[i] < cs[k]);
  };

  std::u32string chosen;
  std::vector<TrajectoryPoint> trajectory;
  double final_loss = 0.0;
  if (cfg.greedy_mode == GreedyMode::sequential) {
    for (std::size_t p = 0; p < cfg.length; ++p) {
      const std::size_t before = eval.evaluations();
      const auto losses = sweep(chosen);
      std::size_t best = 0;
      for (std::size_t i = 1; i < losses.size(); ++i) {
        if (ranked_better(i, best, losses)) best = i;
      }
      if (p + 1 == cfg.length) {
        double running = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < losses.size(); ++i) {
          if (losses[i] < running) {
            running = losses[i];
            trajectory.push_back({before + i + 1, running});
          }
        }
        final_loss = losses[best];
      }
      chosen.push_back(cs[best]);
    }
  } else {
    const auto losses = sweep(U"");
    std::vector<std::size_t> order(cs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t k) { return ranked_better(i, k, losses); });
    for (std::size_t p = 0; p < cfg.length; ++p) chosen.push_back(cs[order[p % order.size()]]);
    final_loss = eval.evaluate(chosen);
    trajectory.push_back({eval.evaluations(), final_loss});
  }
  return detail::finish(base, chosen, final_loss, std::move(trajectory), eval.evaluations(), cfg, start);
}

/// Elitist genetic search. When |C|^L <= population the initial population
/// enumerates the whole space in lexicographic order (remaining slots drawn
/// at random); otherwise it is sampled uniformly with replacement. Each
/// generation keeps the best individual and fills the rest with children of
/// two size-2 tournament winners: uniform per-slot crossover, then per-slot
/// mutation to a uniform charset character. Returns the best ever seen.
inline AttackResult genetic_attack(const Prompt& base, const LossFn& loss, const AttackConfig& cfg,
                                   ExecutionOptions exec = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  detail::Evaluator eval(base, loss, exec.jobs);
  const auto& cs = cfg.charset;
  const std::size_t pop_size = cfg.genetic.population;
  const std::size_t length = cfg.length;

  SplitMix64 init_rng(cfg.seed ^ detail::kGeneticInitRole);
  SplitMix64 rng(cfg.seed ^ detail::kGeneticEvolveRole);

  auto random_individual = [&](SplitMix64& r) {
    std::u32string s(length, U'\0');
    for (auto& c : s) c = cs[r.below(cs.size())];
    return s;
  };

  std::vector<std::u32string> population;
  population.reserve(pop_size);
  const std::uint64_t space = search_space_size(cs.size(), length);
  if (space <= pop_size) {
    std::vector<std::size_t> digits(length, 0);
    for (std::uint64_t k = 0; k < space; ++k) {
      std::u32string s(length, U'\0');
      for (std::size_t i = 0; i < length; ++i) s[i] = cs[digits[i]];
      population.push_back(std::move(s));
      for (std::size_t i = length; i-- > 0;) {
        if (++digits[i] < cs.size()) break;
        digits[i] = 0;
      }
    }
  }
  while (population.size() < pop_size) population.push_back(random_individual(init_rng));

  std::vector<double> fitness = eval.evaluate(population);
  detail::BestSoFar best;
  for (std::size_t i = 0; i < pop_size; ++i) best.offer(population[i], fitness[i]);
  std::vector<TrajectoryPoint> trajectory{{0, best.loss}};

  auto tournament = [&]() -> const std::u32string& {
    const std::size_t a = rng.below(pop_size);
    const std::size_t b = rng.below(pop_size);
    const bool pick_a = fitness[a] < fitness[b] || (fitness[a] == fitness[b] && a <= b);
    return population[pick_a ? a : b];
  };

  for (std::size_t gen = 1; gen <= cfg.genetic.generations; ++gen) {
    std::size_t elite = 0;
    for (std::size_t i = 1; i < pop_size; ++i) {
      if (fitness[i] < fitness[elite]) elite = i;
    }
    std::vector<std::u32string> next;
    next.reserve(pop_size);
    next.push_back(population[elite]);
    while (next.size() < pop_size) {
      const auto& mother = tournament();
      const auto& father = tournament();
      std::u32string child(length, U'\0');
      for (std::size_t i = 0; i < length; ++i) child[i] = rng.uniform() < 0.5 ? mother[i] : father[i];
      for (std::size_t i = 0; i < length; ++i) {
        if (rng.uniform() < cfg.genetic.mutation_rate) child[i] = cs[rng.below(cs.size())];
      }
      next.push_back(std::move(child));
    }
    population = std::move(next);
    fitness = eval.evaluate(population);
    for (std::size_t i = 0; i < pop_size; ++i) best.offer(population[i], fitness[i]);
    trajectory.push_back({gen, best.loss});
  }
  return detail::finish(base, best.suffix, best.loss, std::move(trajectory), eval.evaluations(), cfg, start);
}

/// Row argmax per slot; ties go to the lowest code point.
inline std::u32string discretize(const RelaxedSuffix& suffix) {
  std::u32string out;
  out.reserve(suffix.length);
  for (std::size_t l = 0; l < suffix.length; ++l) {
    const auto row = suffix.row(l);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best] || (row[c] == row[best] && suffix.charset[c] < suffix.charset[best])) best = c;
    }
    out.push_back(suffix.charset[best]);
  }
  return out;
}

/// Projected gradient descent on the relaxed suffix. Starts from uniform
/// rows; each step follows the analytic gradient of the objective through
/// the differentiable encoder, then projects every row back onto the
/// simplex. The relaxed point is discretized by row argmax after every
/// step and the best discrete suffix found is returned, with its loss
/// measured on the discrete text.
inline AttackResult pgd_attack(const Prompt& base, const Objective& objective, const AttackConfig& cfg,
                               ExecutionOptions exec = {}, const PgdObserver& observer = {}) {
  cfg.validate();
  const auto* encoder = objective.backend().differentiable();
  if (!encoder || !objective.backend().capabilities().supports_gradients) {
    throw CapabilityError("PGD needs a backend with gradient support; " + objective.backend().id() + " has none");
  }
  const auto start = std::chrono::steady_clock::now();
  const LossFn loss = [&](const std::string& s) { return objective(s); };
  detail::Evaluator eval(base, loss, exec.jobs);

  const auto prefix = text::decode_utf8(base.text() + " ");
  auto suffix = RelaxedSuffix::uniform(cfg.length, cfg.charset.to_vector(), prefix.size());

  detail::BestSoFar best;
  std::vector<TrajectoryPoint> trajectory;
  auto record = [&](std::size_t step) {
    const auto candidate = discretize(suffix);
    best.offer(candidate, eval.evaluate(candidate));
    trajectory.push_back({step, best.loss});
  };
  record(0);

  for (std::size_t step = 1; step <= cfg.pgd.steps; ++step) {
    const auto relaxed = encoder->embed_relaxed(prefix, suffix);
    const auto grad = relaxed.pullback(objective.gradient(relaxed.embedding()));
    for (std::size_t i = 0; i < grad.size(); ++i) suffix.weights[i] -= cfg.pgd.step_size * grad[i];
    for (std::size_t l = 0; l < suffix.length; ++l) project_to_simplex(suffix.row(l));
    if (observer) observer(step, suffix);
    record(step);
  }
  return detail::finish(base, best.suffix, best.loss, std::move(trajectory), eval.evaluations(), cfg, start);
}

/// Exhaustive search in lexicographic charset order (slot 0 most
/// significant). Ties resolve to the first candidate enumerated.
inline AttackResult brute_force_attack(const Prompt& base, const LossFn& loss, const AttackConfig& cfg,
                                       ExecutionOptions exec = {}) {
  cfg.validate();
  const auto& cs = cfg.charset;
  const std::uint64_t space = search_space_size(cs.size(), cfg.length);
  if (space > cfg.brute_cap) {
    throw SpaceTooLargeError("search space " + std::to_string(cs.size()) + "^" + std::to_string(cfg.length) +
                             " exceeds the brute-force cap of " + std::to_string(cfg.brute_cap));
  }
  const auto start = std::chrono::steady_clock::now();
  detail::Evaluator eval(base, loss, exec.jobs, /*memoize=*/false);
  detail::BestSoFar best;
  std::vector<TrajectoryPoint> trajectory;

  constexpr std::uint64_t kBatch = 4096;
  std::vector<std::size_t> digits(cfg.length, 0);
  std::uint64_t index = 0;
  while (index < space) {
    std::vector<std::u32string> batch;
    for (; index < space && batch.size() < kBatch; ++index) {
      std::u32string s(cfg.length, U'\0');
      for (std::size_t i = 0; i < cfg.length; ++i) s[i] = cs[digits[i]];
      batch.push_back(std::move(s));
      for (std::size_t i = cfg.length; i-- > 0;) {
        if (++digits[i] < cs.size()) break;
        digits[i] = 0;
      }
    }
    const auto losses = eval.evaluate(batch);
    const std::uint64_t first = index - batch.size();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (best.offer(batch[i], losses[i])) trajectory.push_back({static_cast<std::size_t>(first + i), best.loss});
    }
  }
  return detail::finish(base, best.suffix, best.loss, std::move(trajectory), eval.evaluations(), cfg, start);
}

/// One draw of random_perturbation(seed), evaluated once.
inline AttackResult random_attack(const Prompt& base, const LossFn& loss, const AttackConfig& cfg,
                                  ExecutionOptions exec = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  detail::Evaluator eval(base, loss, exec.jobs);
  const auto pert = random_perturbation(cfg.seed, cfg.charset, cfg.length);
  const double l = eval.evaluate(pert.chars());
  return detail::finish(base, pert.chars(), l, {{0, l}}, eval.evaluations(), cfg, start);
}

/// Builds the objective implied by cfg.targeted.
inline Objective make_objective(const EncoderBackend& backend, const Prompt& base, const AttackConfig& cfg) {
  return cfg.targeted ? Objective::targeted(backend, base, *cfg.targeted) : Objective::untargeted(backend, base);
}

/// Dispatches on cfg.method.
inline AttackResult run_attack(const Prompt& base, const Objective& objective, const AttackConfig& cfg,
                               ExecutionOptions exec = {}) {
  const LossFn loss = [&](const std::string& s) { return objective(s); };
  switch (cfg.method) {
    case Method::greedy: return greedy_attack(base, loss, cfg, exec);
    case Method::genetic: return genetic_attack(base, loss, cfg, exec);
    case Method::pgd: return pgd_attack(base, objective, cfg, exec);
    case Method::random: return random_attack(base, loss, cfg, exec);
    case Method::brute: return brute_force_attack(base, loss, cfg, exec);
  }
  throw InvalidArgumentError("unknown method");
}

}  // namespace qfa
