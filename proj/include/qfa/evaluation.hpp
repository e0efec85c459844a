#pragma once

/// @file evaluation.hpp
/// CLIP-score evaluation: text/image cosine, per-condition aggregation
/// (mean and population std) and report emission as JSON or CSV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "qfa/embedding.hpp"
#include "qfa/perturbation.hpp"

namespace qfa {

enum class Condition { no_attack, random, greedy, genetic, pgd };
enum class Setting { untargeted, targeted };

inline const char* to_string(Condition c) noexcept {
  switch (c) {
    case Condition::no_attack: return "no_attack";
    case Condition::random: return "random";
    case Condition::greedy: return "greedy";
    case Condition::genetic: return "genetic";
    case Condition::pgd: return "pgd";
  }
  return "?";
}

inline const char* to_string(Setting s) noexcept { return s == Setting::untargeted ? "untargeted" : "targeted"; }

inline Condition parse_condition(const std::string& s) {
  for (auto c : {Condition::no_attack, Condition::random, Condition::greedy, Condition::genetic, Condition::pgd}) {
    if (s == to_string(c)) return c;
  }
  throw InvalidArgumentError("unknown condition: " + s);
}

inline Setting parse_setting(const std::string& s) {
  if (s == "untargeted") return Setting::untargeted;
  if (s == "targeted") return Setting::targeted;
  throw InvalidArgumentError("unknown setting: " + s);
}

struct ScoreRecord {
  std::string prompt_id;
  std::string image_id;
  double score = 0.0;
  Condition condition = Condition::no_attack;
  Setting setting = Setting::untargeted;

  void validate() const {
    if (!(score >= -1.0 && score <= 1.0)) throw InvalidArgumentError("score outside [-1, 1]");
  }
};

struct AggregateCell {
  Setting setting = Setting::untargeted;
  Condition condition = Condition::no_attack;
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
  std::size_t count = 0;

  friend bool operator==(const AggregateCell&, const AggregateCell&) = default;
};

/// Cells ordered by (setting, condition).
struct AggregateReport {
  std::vector<AggregateCell> cells;

  const AggregateCell* find(Setting s, Condition c) const {
    for (const auto& cell : cells) {
      if (cell.setting == s && cell.condition == c) return &cell;
    }
    return nullptr;
  }

  friend bool operator==(const AggregateReport&, const AggregateReport&) = default;
};

/// Raw cosine between a text and an image embedding, no rescaling.
inline double clip_score(const Embedding& text_emb, const Embedding& image_emb) { return cosine(text_emb, image_emb); }

/// Text used to score targeted attacks: "This is a photo of <phrase>".
inline Prompt targeted_eval_text(const std::string& target_phrase) {
  if (target_phrase.empty()) throw InvalidArgumentError("target phrase must not be empty");
  return Prompt("This is a photo of " + target_phrase);
}

/// Groups by (setting, condition). Each group is summed in sorted order, so
/// the result does not depend on record order.
inline AggregateReport aggregate(std::span<const ScoreRecord> records) {
  if (records.empty()) throw EmptyInputError("no score records to aggregate");
  std::map<std::pair<Setting, Condition>, std::vector<double>> groups;
  for (const auto& r : records) {
    r.validate();
    groups[{r.setting, r.condition}].push_back(r.score);
  }
  AggregateReport report;
  for (auto& [key, scores] : groups) {
    std::sort(scores.begin(), scores.end());
    const auto n = static_cast<double>(scores.size());
    double sum = 0.0;
    for (double s : scores) sum += s;
    const double mean = std::clamp(sum / n, scores.front(), scores.back());
    double sq = 0.0;
    for (double s : scores) sq += (s - mean) * (s - mean);
    report.cells.push_back({key.first, key.second, mean, std::sqrt(sq / n), scores.size()});
  }
  return report;
}

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string report_to_csv(const AggregateReport& report) {
  std::string out = "setting,condition,mean,std,count\n";
  for (const auto& c : report.cells) {
    out += std::string(to_string(c.setting)) + "," + to_string(c.condition) + "," + detail::format_double(c.mean) +
           "," + detail::format_double(c.std) + "," + std::to_string(c.count) + "\n";
  }
  return out;
}

inline AggregateReport report_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t line_no = 0;
  AggregateReport report;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "setting,condition,mean,std,count") throw ParseError("report.csv", 1, "unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw ParseError("report.csv", line_no, "expected 5 columns");
    try {
      report.cells.push_back({parse_setting(fields[0]), parse_condition(fields[1]), std::stod(fields[2]),
                              std::stod(fields[3]), static_cast<std::size_t>(std::stoull(fields[4]))});
    } catch (const std::exception& e) {
      throw ParseError("report.csv", line_no, e.what());
    }
  }
  return report;
}

}  // namespace qfa
