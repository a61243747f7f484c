#ifndef CPBO_BENCH_METRICS_HPP
#define CPBO_BENCH_METRICS_HPP

#include "cpbo/bench/problems.hpp"
#include "cpbo/core/normal.hpp"
#include "cpbo/engine/history.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo::bench {

struct OracleConfig {
  enum class Noise { noiseless, thurstone };
  Noise noise = Noise::noiseless;
  double sigma_sim = 1.0;

  void validate() const {
    if (noise == Noise::thurstone && !(sigma_sim > 0.0))
      throw std::invalid_argument("oracle: sigma_sim must be positive");
  }
};

/// Parses "noiseless" or "thurstone:<sigma>".
inline OracleConfig parse_oracle(const std::string& s) {
  OracleConfig o;
  if (s == "noiseless") return o;
  const std::string prefix = "thurstone";
  if (s.rfind(prefix, 0) == 0) {
    o.noise = OracleConfig::Noise::thurstone;
    if (s.size() > prefix.size()) {
      if (s[prefix.size()] != ':' && s[prefix.size()] != '=')
        throw std::invalid_argument("bad oracle \"" + s + "\"");
      o.sigma_sim = std::stod(s.substr(prefix.size() + 1));
    }
    o.validate();
    return o;
  }
  throw std::invalid_argument("unknown oracle \"" + s + "\"");
}

inline std::string to_string(const OracleConfig& o) {
  if (o.noise == OracleConfig::Noise::noiseless) return "noiseless";
  return "thurstone:" + std::to_string(o.sigma_sim);
}

/// Simulated chooser comparing two native points by the true objective.
template <typename Rng>
engine::Winner simulate_choice(const ProblemSpec& problem, const Vector& x_i, const Vector& x_j,
                               const OracleConfig& oracle, Rng& rng) {
  const double fi = problem.objective(x_i);
  const double fj = problem.objective(x_j);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (oracle.noise == OracleConfig::Noise::noiseless) {
    if (fi > fj) return engine::Winner::i;
    if (fj > fi) return engine::Winner::j;
    return unif(rng) < 0.5 ? engine::Winner::i : engine::Winner::j;
  }
  const double p = normal_cdf((fi - fj) / (std::numbers::sqrt2 * oracle.sigma_sim));
  return unif(rng) < p ? engine::Winner::i : engine::Winner::j;
}

/// One benchmark iteration in native coordinates with its ground truth.
struct RunRow {
  int n = 0;
  Vector x_i;
  Vector x_j;
  engine::Winner winner = engine::Winner::i;
  double c_i = 0.0;
  double c_j = 0.0;
  double f_i = 0.0;
  double f_j = 0.0;
  bool feasible_i = false;
  bool feasible_j = false;
  bool auto_won = false;
  double gap = 0.0;
  double feasible_fraction = 0.0;
};

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<RunRow> rows;
};

/// f_opt minus the best truly feasible objective seen up to each iteration;
/// f_min stands in for the best value until a feasible point appears.
inline std::vector<double> optimality_gap(const std::vector<RunRow>& rows, const ProblemSpec& problem) {
  std::vector<double> gaps;
  gaps.reserve(rows.size());
  double best = problem.f_min;
  for (const auto& r : rows) {
    if (r.feasible_i) best = std::max(best, r.f_i);
    if (r.feasible_j) best = std::max(best, r.f_j);
    gaps.push_back(problem.f_opt - best);
  }
  return gaps;
}

/// Cumulative share of sampled points that truly satisfy the constraint.
inline std::vector<double> feasible_fraction(const std::vector<RunRow>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  long feasible = 0;
  long total = 0;
  for (const auto& r : rows) {
    feasible += static_cast<long>(r.feasible_i) + static_cast<long>(r.feasible_j);
    total += 2;
    out.push_back(static_cast<double>(feasible) / static_cast<double>(total));
  }
  return out;
}

/// Fills the per-row metric columns from the ground-truth flags.
inline void annotate_metrics(std::vector<RunRow>& rows, const ProblemSpec& problem) {
  const auto gaps = optimality_gap(rows, problem);
  const auto fracs = feasible_fraction(rows);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].gap = gaps[k];
    rows[k].feasible_fraction = fracs[k];
  }
}

}  // namespace cpbo::bench

#endif
