#ifndef CPBO_ENGINE_ENGINE_HPP
#define CPBO_ENGINE_ENGINE_HPP

#include "cpbo/acq/maximize.hpp"
#include "cpbo/engine/history.hpp"
#include "cpbo/gp/regression.hpp"
#include "cpbo/pref/preference_gp.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cpbo::engine {

enum class Policy { euboc, euboc_cold, eubo, eubo_cons, random };

inline std::string to_string(Policy p) {
  switch (p) {
    case Policy::euboc: return "euboc";
    case Policy::euboc_cold: return "euboc-cold";
    case Policy::eubo: return "eubo";
    case Policy::eubo_cons: return "eubo-cons";
    case Policy::random: return "random";
  }
  return "?";
}

inline Policy parse_policy(const std::string& s) {
  if (s == "euboc") return Policy::euboc;
  if (s == "euboc-cold") return Policy::euboc_cold;
  if (s == "eubo") return Policy::eubo;
  if (s == "eubo-cons") return Policy::eubo_cons;
  if (s == "random") return Policy::random;
  throw std::invalid_argument("unknown policy \"" + s + "\"");
}

/// Policies that keep a constraint surrogate and use it in proposals.
inline bool uses_constraint_surrogate(Policy p) { return p == Policy::euboc || p == Policy::euboc_cold; }

/// The feasible candidate wins automatically when exactly one of the two
/// constraint values meets lambda; otherwise the choice is deferred.
inline std::optional<Winner> auto_win_rule(double c_i, double c_j, double lambda) {
  const bool fi = c_i >= lambda;
  const bool fj = c_j >= lambda;
  if (fi && !fj) return Winner::i;
  if (fj && !fi) return Winner::j;
  return std::nullopt;
}

using ConstraintFunction = std::function<double(const ParamVector&)>;

/// Raised when a constraint evaluation is not finite; carries the offending point.
class evaluation_error : public std::runtime_error {
 public:
  evaluation_error(const std::string& what, ParamVector point)
      : std::runtime_error(what), point_(std::move(point)) {}
  const ParamVector& point() const { return point_; }

 private:
  ParamVector point_;
};

struct EngineConfig {
  Eigen::Index dims = 1;
  Policy policy = Policy::euboc;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double sigma_cmp = 1.0;
  int num_restarts = 3;
  int raw_samples = 512;
  double sigma_floor = acq::kDefaultSigmaFloor;
  int acq_max_iterations = 100;
  acq::GradientMode gradient = acq::GradientMode::analytic;
  gp::KernelPriors priors{};
  int hyper_restarts = 3;
  double jitter = 1e-6;
  int max_fit_points = 256;
  /// Hyperparameters are refit once a training set has grown by this fraction
  /// since the last fit; in between, the posterior is re-conditioned.
  double refit_growth = 0.1;

  void validate() const {
    if (dims <= 0) throw std::invalid_argument("EngineConfig: dims must be positive");
    if (!std::isfinite(lambda)) throw std::invalid_argument("EngineConfig: lambda must be finite");
    if (!(sigma_cmp > 0.0)) throw std::invalid_argument("EngineConfig: sigma_cmp must be positive");
    if (refit_growth < 0.0) throw std::invalid_argument("EngineConfig: refit_growth must be >= 0");
    acq_config(0).validate();
  }

  acq::AcqConfig acq_config(std::uint64_t acq_seed) const {
    acq::AcqConfig c;
    c.lambda = lambda;
    c.num_restarts = num_restarts;
    c.raw_samples = raw_samples;
    c.sigma_floor = sigma_floor;
    c.seed = acq_seed;
    c.max_iterations = acq_max_iterations;
    c.gradient = gradient;
    return c;
  }
};

/// Warm-start sample: uniform points of [0,1]^N and their constraint values.
struct WarmStartData {
  std::vector<ParamVector> inputs;
  std::vector<double> values;
};

/// Samples n_points uniformly and evaluates the constraint at each.
inline WarmStartData sample_warm_start(const ConstraintFunction& constraint, Eigen::Index dims, int n_points,
                                       std::uint64_t seed) {
  if (n_points < 0) throw std::invalid_argument("warm_start: n_points must be >= 0");
  WarmStartData data;
  std::mt19937_64 rng(mix_seed(seed, 0x7761726dULL));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < n_points; ++k) {
    ParamVector x(dims);
    for (Eigen::Index d = 0; d < dims; ++d) x(d) = unif(rng);
    const double c = constraint(x);
    if (!std::isfinite(c)) throw evaluation_error("warm_start: constraint returned a non-finite value", x);
    data.inputs.push_back(std::move(x));
    data.values.push_back(c);
  }
  return data;
}

inline gp::GPFitOptions constraint_fit_options(const EngineConfig& cfg, std::uint64_t seed) {
  gp::GPFitOptions o;
  o.kind = gp::KernelKind::matern52;
  o.priors = cfg.priors;
  o.jitter = cfg.jitter;
  o.restarts = cfg.hyper_restarts;
  o.seed = seed;
  o.max_fit_points = cfg.max_fit_points;
  return o;
}

inline gp::KernelSpec default_constraint_kernel(const EngineConfig& cfg) {
  return gp::KernelSpec::isotropic(gp::KernelKind::matern52, cfg.dims, cfg.priors.lengthscale.mode(),
                                   cfg.priors.output_scale.mode());
}

/// Trains the constraint surrogate on a fresh uniform sample; n_points = 0
/// gives the prior-only model.
inline gp::GPModel warm_start(const ConstraintFunction& constraint, Eigen::Index dims, int n_points,
                              std::uint64_t seed, const EngineConfig& cfg = {}) {
  EngineConfig c = cfg;
  c.dims = dims;
  const auto data = sample_warm_start(constraint, dims, n_points, seed);
  if (data.inputs.empty()) return gp::GPModel::prior(default_constraint_kernel(c), 0.0, c.jitter);
  return gp::fit_gp(data.inputs, data.values, constraint_fit_options(c, mix_seed(seed, 0x666974ULL)));
}

struct Incumbent {
  ParamVector x;
  double posterior_mean;
};

/// One CPBO run: alternating propose() / apply_feedback() calls.
class Engine {
 public:
  explicit Engine(EngineConfig cfg) : cfg_(std::move(cfg)), dataset_(cfg_.dims, cfg_.sigma_cmp) {
    cfg_.validate();
    objective_ = pref::PreferenceModel::prior(default_objective_kernel());
    if (uses_constraint_surrogate(cfg_.policy))
      constraint_ = gp::GPModel::prior(default_constraint_kernel(cfg_), 0.0, cfg_.jitter);
  }

  const EngineConfig& config() const { return cfg_; }
  const History& history() const { return history_; }
  const pref::PreferenceDataset& dataset() const { return dataset_; }
  const pref::PreferenceModel& objective_model() const { return objective_; }
  /// Constraint surrogate, or nullptr for policies without one.
  const gp::GPModel* constraint_model() const { return constraint_ ? &*constraint_ : nullptr; }
  int iteration() const { return static_cast<int>(history_.records.size()); }
  const std::optional<std::pair<ParamVector, ParamVector>>& pending() const { return pending_; }
  /// Constraint-surrogate predictions issued by proposals so far.
  std::size_t constraint_queries() const { return constraint_queries_; }

  /// Installs warm-start data and fits the constraint surrogate on it.
  /// Only EUBOC warm-starts, and only before the first iteration.
  const gp::GPModel& warm_start(const ConstraintFunction& constraint, int n_points, std::uint64_t seed) {
    return set_warm_start(sample_warm_start(constraint, cfg_.dims, n_points, seed));
  }

  const gp::GPModel& set_warm_start(WarmStartData data) {
    if (cfg_.policy != Policy::euboc) throw state_error("warm start is only defined for the euboc policy");
    if (!history_.records.empty() || pending_) throw state_error("warm start must precede the first proposal");
    for (const auto& x : data.inputs)
      if (x.size() != cfg_.dims) throw std::invalid_argument("warm start: dimension mismatch");
    history_.warm_inputs = std::move(data.inputs);
    history_.warm_values = std::move(data.values);
    refresh_constraint();
    return *constraint_;
  }

  /// Proposes the next pair (idempotent while a pair is pending).
  std::pair<ParamVector, ParamVector> propose() {
    if (pending_) return *pending_;
    const int n = iteration() + 1;
    const bool cold = dataset_.comparisons().empty() && (!constraint_ || constraint_->size() == 0);
    if (cfg_.policy == Policy::random || cold) {
      pending_ = random_pair(n);
    } else {
      const auto policy = uses_constraint_surrogate(cfg_.policy) ? acq::AcqPolicy::euboc : acq::AcqPolicy::eubo;
      const auto proposal = acq::maximize_pair(objective_, constraint_model(),
                                               cfg_.acq_config(mix_seed(cfg_.seed, 0x61637100ULL + n)), policy);
      constraint_queries_ += proposal.constraint_queries;
      pending_ = std::make_pair(proposal.x_i, proposal.x_j);
    }
    return *pending_;
  }

  /// Records the outcome for the pending pair and updates both surrogates.
  void apply_feedback(Winner winner, double c_i, double c_j, bool auto_won = false) {
    if (!pending_) throw state_error("apply_feedback: no pending pair");
    if (!std::isfinite(c_i) || !std::isfinite(c_j))
      throw evaluation_error("apply_feedback: non-finite constraint value",
                             std::isfinite(c_i) ? pending_->second : pending_->first);
    IterationRecord rec;
    rec.n = iteration() + 1;
    rec.x_i = pending_->first;
    rec.x_j = pending_->second;
    rec.winner = winner;
    rec.c_i = c_i;
    rec.c_j = c_j;
    rec.auto_won = auto_won;
    pending_.reset();

    const std::size_t ii = dataset_.add_point(rec.x_i);
    const std::size_t jj = dataset_.add_point(rec.x_j);
    if (ii != jj) {
      if (winner == Winner::i) dataset_.add_comparison(ii, jj);
      else dataset_.add_comparison(jj, ii);
    }
    history_.records.push_back(std::move(rec));
    refresh_objective();
    if (constraint_) refresh_constraint();
  }

  /// Observed point with observed c >= lambda and the highest posterior mean.
  std::optional<Incumbent> incumbent() const {
    std::optional<Incumbent> best;
    for (const auto& r : history_.records) {
      for (int side = 0; side < 2; ++side) {
        const double c = side == 0 ? r.c_i : r.c_j;
        if (!(c >= cfg_.lambda)) continue;
        const ParamVector& x = side == 0 ? r.x_i : r.x_j;
        const double m = objective_.mean(x);
        if (!best || m > best->posterior_mean) best = Incumbent{x, m};
      }
    }
    return best;
  }

  /// The n-th pair of the uniform stream used by RANDOM and by cold starts.
  std::pair<ParamVector, ParamVector> random_pair(int n) const {
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x72616e64000000ULL + static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ParamVector a(cfg_.dims), b(cfg_.dims);
    for (Eigen::Index d = 0; d < cfg_.dims; ++d) a(d) = unif(rng);
    for (Eigen::Index d = 0; d < cfg_.dims; ++d) b(d) = unif(rng);
    return {a, b};
  }

  /// Rebuilds an engine from its configuration, warm-start data and recorded
  /// iterations, checking that every regenerated proposal matches the record.
  static Engine replay(const EngineConfig& cfg, const WarmStartData& warm,
                       const std::vector<IterationRecord>& records) {
    Engine e(cfg);
    if (cfg.policy == Policy::euboc) e.set_warm_start(warm);
    for (const auto& r : records) {
      const auto [a, b] = e.propose();
      if (a != r.x_i || b != r.x_j)
        throw state_error("replay: regenerated proposal differs at iteration " + std::to_string(r.n));
      e.apply_feedback(r.winner, r.c_i, r.c_j, r.auto_won);
    }
    return e;
  }

 private:
  gp::KernelSpec default_objective_kernel() const {
    return gp::KernelSpec::isotropic(gp::KernelKind::squared_exponential, cfg_.dims,
                                     cfg_.priors.lengthscale.mode(), cfg_.priors.output_scale.mode());
  }

  bool needs_refit(std::size_t size, std::size_t last_fit) const {
    return last_fit == 0 || static_cast<double>(size) >= (1.0 + cfg_.refit_growth) * static_cast<double>(last_fit);
  }

  void refresh_objective() {
    const std::size_t size = dataset_.size();
    if (dataset_.comparisons().empty()) {
      objective_ = {dataset_.points_matrix(), objective_.kernel(), pref::laplace_fit(dataset_, objective_.kernel())};
      return;
    }
    if (needs_refit(size, objective_fit_size_)) {
      pref::PreferenceFitOptions o;
      o.priors = cfg_.priors;
      o.restarts = cfg_.hyper_restarts;
      o.seed = mix_seed(cfg_.seed, 0x6f626a00ULL + static_cast<std::uint64_t>(iteration()));
      o.initial = objective_.kernel();
      objective_ = pref::fit_preference_gp(dataset_, o);
      objective_fit_size_ = size;
    } else {
      objective_ = {dataset_.points_matrix(), objective_.kernel(), pref::laplace_fit(dataset_, objective_.kernel())};
    }
  }

  void refresh_constraint() {
    std::vector<ParamVector> inputs = history_.warm_inputs;
    std::vector<double> values = history_.warm_values;
    for (const auto& r : history_.records) {
      inputs.push_back(r.x_i);
      values.push_back(r.c_i);
      inputs.push_back(r.x_j);
      values.push_back(r.c_j);
    }
    if (inputs.empty()) {
      constraint_ = gp::GPModel::prior(default_constraint_kernel(cfg_), 0.0, cfg_.jitter);
      return;
    }
    const Matrix x = stack_rows(inputs, cfg_.dims);
    const Vector y = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    if (needs_refit(inputs.size(), constraint_fit_size_)) {
      auto o = constraint_fit_options(cfg_, mix_seed(cfg_.seed, 0x636f6e00ULL + static_cast<std::uint64_t>(iteration())));
      if (constraint_fit_size_ > 0) o.initial = constraint_->kernel();
      constraint_ = gp::fit_gp(x, y, o);
      constraint_fit_size_ = inputs.size();
    } else {
      constraint_ = gp::GPModel::condition_profiled(x, y, constraint_->kernel(), cfg_.jitter);
    }
  }

  EngineConfig cfg_;
  pref::PreferenceDataset dataset_;
  pref::PreferenceModel objective_;
  std::optional<gp::GPModel> constraint_;
  History history_;
  std::optional<std::pair<ParamVector, ParamVector>> pending_;
  std::size_t objective_fit_size_ = 0;
  std::size_t constraint_fit_size_ = 0;
  std::size_t constraint_queries_ = 0;
};

}  // namespace cpbo::engine

#endif
