#include "cpbo/bench/problems.hpp"
#include "cpbo/engine/engine.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

using cpbo::ParamVector;
using cpbo::Vector;
using namespace cpbo::engine;

namespace {

EngineConfig config_for(Policy policy, Eigen::Index dims, double lambda, std::uint64_t seed) {
  EngineConfig cfg;
  cfg.dims = dims;
  cfg.policy = policy;
  cfg.lambda = lambda;
  cfg.seed = seed;
  return cfg;
}

ConstraintFunction gardner_unit_constraint() {
  return [p = cpbo::bench::gardner2d()](const ParamVector& u) { return p.constraint(p.to_native(u)); };
}

TEST(WarmStart, ZeroPointsGivesPrior) {
  const auto m = warm_start(gardner_unit_constraint(), 2, 0, 5);
  EXPECT_EQ(m.size(), 0);
  double mu, var;
  m.predict_marginal(Vector::Constant(2, 0.3), mu, var);
  EXPECT_EQ(mu, m.mean_constant());
  EXPECT_EQ(var, m.kernel().output_scale);
}

TEST(WarmStart, DeterministicForSeed) {
  const auto a = warm_start(gardner_unit_constraint(), 2, 40, 11);
  const auto b = warm_start(gardner_unit_constraint(), 2, 40, 11);
  EXPECT_EQ(a.inputs(), b.inputs());
  EXPECT_EQ(a.kernel().lengthscales, b.kernel().lengthscales);
  EXPECT_EQ(a.kernel().output_scale, b.kernel().output_scale);
  const auto c = warm_start(gardner_unit_constraint(), 2, 40, 12);
  EXPECT_NE(a.inputs(), c.inputs());
}

TEST(WarmStart, GardnerFeasibilityClassifiedOnDenseGrid) {
  const auto problem = cpbo::bench::gardner2d();
  const auto m = warm_start(gardner_unit_constraint(), 2, 200, 3);
  int agree = 0;
  for (int a = 0; a < 100; ++a)
    for (int b = 0; b < 100; ++b) {
      Vector u(2);
      u << (a + 0.5) / 100.0, (b + 0.5) / 100.0;
      double mu, var;
      m.predict_marginal(u, mu, var);
      if ((mu >= problem.lambda) == problem.feasible(problem.to_native(u))) ++agree;
    }
  EXPECT_GE(agree, 9000);
}

TEST(WarmStart, NonFiniteConstraintReportsPoint) {
  const ConstraintFunction bad = [](const ParamVector& x) {
    return x(0) > 0.5 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  };
  try {
    warm_start(bad, 1, 50, 1);
    FAIL() << "expected evaluation_error";
  } catch (const evaluation_error& e) {
    EXPECT_GT(e.point()(0), 0.5);
  }
}

TEST(Propose, FirstPairMatchesRandomPolicy) {
  Engine random(config_for(Policy::random, 3, 0.0, 42));
  const auto expected = random.propose();
  for (auto p : {Policy::euboc, Policy::euboc_cold, Policy::eubo, Policy::eubo_cons}) {
    Engine e(config_for(p, 3, 0.0, 42));
    const auto got = e.propose();
    EXPECT_EQ(got.first, expected.first) << to_string(p);
    EXPECT_EQ(got.second, expected.second) << to_string(p);
  }
}

TEST(Propose, IdempotentWhilePending) {
  Engine e(config_for(Policy::eubo, 2, 0.0, 1));
  const auto a = e.propose();
  const auto b = e.propose();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// Runs k iterations on Gardner with a noiseless chooser.
void drive(Engine& e, int k) {
  const auto problem = cpbo::bench::gardner2d();
  for (int it = 0; it < k; ++it) {
    const auto [a, b] = e.propose();
    const Vector na = problem.to_native(a), nb = problem.to_native(b);
    const double ci = problem.constraint(na), cj = problem.constraint(nb);
    Winner w = problem.objective(na) >= problem.objective(nb) ? Winner::i : Winner::j;
    bool autow = false;
    if (e.config().policy == Policy::eubo_cons) {
      if (auto aw = auto_win_rule(ci, cj, problem.lambda)) {
        w = *aw;
        autow = true;
      }
    }
    e.apply_feedback(w, ci, cj, autow);
  }
}

TEST(Propose, BaselinesNeverQueryConstraintSurrogate) {
  for (auto p : {Policy::eubo, Policy::random, Policy::eubo_cons}) {
    Engine e(config_for(p, 2, 0.5, 8));
    drive(e, 6);
    EXPECT_EQ(e.constraint_queries(), 0u) << to_string(p);
    EXPECT_EQ(e.constraint_model(), nullptr) << to_string(p);
  }
  Engine e(config_for(Policy::euboc_cold, 2, 0.5, 8));
  drive(e, 3);
  EXPECT_GT(e.constraint_queries(), 0u);
}

TEST(AutoWin, Examples) {
  EXPECT_EQ(auto_win_rule(0.6, 0.4, 0.5), Winner::i);
  EXPECT_EQ(auto_win_rule(0.4, 0.6, 0.5), Winner::j);
  EXPECT_FALSE(auto_win_rule(0.6, 0.7, 0.5).has_value());
  EXPECT_FALSE(auto_win_rule(0.4, 0.4, 0.5).has_value());
  EXPECT_EQ(auto_win_rule(0.5, 0.4999, 0.5), Winner::i);
}

TEST(AutoWin, FiresIffExactlyOneFeasible) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 1000; ++t) {
    const double ci = n01(rng), cj = n01(rng), lam = n01(rng);
    EXPECT_EQ(auto_win_rule(ci, cj, lam).has_value(), (ci >= lam) != (cj >= lam));
  }
}

TEST(ApplyFeedback, RequiresPendingPair) {
  Engine e(config_for(Policy::eubo, 2, 0.0, 1));
  EXPECT_THROW(e.apply_feedback(Winner::i, 0.0, 0.0), cpbo::state_error);
}

TEST(ApplyFeedback, Bookkeeping) {
  Engine e(config_for(Policy::random, 2, 0.5, 3));
  drive(e, 7);
  EXPECT_EQ(e.history().records.size(), 7u);
  EXPECT_EQ(e.dataset().size(), 14u);
  EXPECT_EQ(e.dataset().comparisons().size(), 7u);
  for (int k = 0; k < 7; ++k) EXPECT_EQ(e.history().records[static_cast<std::size_t>(k)].n, k + 1);
}

TEST(ApplyFeedback, ColdConstraintModelSeesOnlyObservations) {
  Engine e(config_for(Policy::euboc_cold, 2, 0.5, 3));
  drive(e, 5);
  ASSERT_NE(e.constraint_model(), nullptr);
  EXPECT_EQ(e.constraint_model()->size(), 10);
}

TEST(ApplyFeedback, WarmConstraintModelIncludesWarmPoints) {
  Engine e(config_for(Policy::euboc, 2, 0.5, 3));
  e.warm_start(gardner_unit_constraint(), 25, 9);
  drive(e, 3);
  EXPECT_EQ(e.constraint_model()->size(), 31);
}

TEST(WarmStart, OnlyForEubocBeforeFirstProposal) {
  Engine cold(config_for(Policy::euboc_cold, 2, 0.5, 3));
  EXPECT_THROW(cold.warm_start(gardner_unit_constraint(), 5, 1), cpbo::state_error);
  Engine e(config_for(Policy::euboc, 2, 0.5, 3));
  e.propose();
  EXPECT_THROW(e.warm_start(gardner_unit_constraint(), 5, 1), cpbo::state_error);
}

TEST(Replay, ReproducesModelsAndNextProposal) {
  auto cfg = config_for(Policy::euboc, 2, 0.5, 21);
  const auto warm = sample_warm_start(gardner_unit_constraint(), 2, 30, 5);
  Engine e(cfg);
  e.set_warm_start(warm);
  drive(e, 8);
  const auto next = e.propose();

  Engine r = Engine::replay(cfg, warm, e.history().records);
  EXPECT_EQ(r.objective_model().kernel().lengthscales, e.objective_model().kernel().lengthscales);
  EXPECT_EQ(r.objective_model().kernel().output_scale, e.objective_model().kernel().output_scale);
  EXPECT_EQ(r.constraint_model()->kernel().lengthscales, e.constraint_model()->kernel().lengthscales);
  const auto again = r.propose();
  EXPECT_EQ(again.first, next.first);
  EXPECT_EQ(again.second, next.second);
}

TEST(Replay, DetectsTamperedRecord) {
  auto cfg = config_for(Policy::eubo, 2, 0.5, 2);
  Engine e(cfg);
  drive(e, 3);
  auto records = e.history().records;
  records[2].x_i(0) += 0.25;
  EXPECT_THROW(Engine::replay(cfg, {}, records), cpbo::state_error);
}

TEST(History, JsonLinesRoundTrip) {
  Engine e(config_for(Policy::eubo_cons, 2, 0.5, 6));
  drive(e, 4);
  const std::string text = to_jsonl(e.history().records);
  std::istringstream is(text);
  const auto back = read_jsonl(is);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t k = 0; k < back.size(); ++k) {
    const auto& a = e.history().records[k];
    EXPECT_EQ(back[k].n, a.n);
    EXPECT_EQ(back[k].x_i, a.x_i);
    EXPECT_EQ(back[k].x_j, a.x_j);
    EXPECT_EQ(back[k].winner, a.winner);
    EXPECT_EQ(back[k].c_i, a.c_i);
    EXPECT_EQ(back[k].c_j, a.c_j);
    EXPECT_EQ(back[k].auto_won, a.auto_won);
  }
  EXPECT_EQ(to_jsonl(back), text);
}

TEST(Incumbent, EmptyWithoutFeasibleObservation) {
  Engine e(config_for(Policy::random, 1, 10.0, 1));
  const auto [a, b] = e.propose();
  e.apply_feedback(Winner::i, 0.0, 1.0);
  EXPECT_FALSE(e.incumbent().has_value());
}

TEST(Incumbent, SingleFeasibleObservation) {
  Engine e(config_for(Policy::random, 1, 0.5, 1));
  const auto [a, b] = e.propose();
  e.apply_feedback(Winner::i, 0.0, 1.0);
  const auto inc = e.incumbent();
  ASSERT_TRUE(inc.has_value());
  EXPECT_EQ(inc->x, b);
  EXPECT_DOUBLE_EQ(inc->posterior_mean, e.objective_model().mean(b));
}

// 1D problem: feasible on [0.4, 1]; the global maximum at 0.15 is infeasible,
// the best feasible point is 0.75.
double toy_f(double x) { return std::exp(-(x - 0.75) * (x - 0.75) / 0.02) + 1.5 * std::exp(-(x - 0.15) * (x - 0.15) / 0.01); }
double toy_c(double x) { return x; }

TEST(Incumbent, OneDimensionalRunFindsTopDecile) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int g = 0; g <= 6000; ++g) {
    const double x = 0.4 + 0.6 * g / 6000.0;
    lo = std::min(lo, toy_f(x));
    hi = std::max(hi, toy_f(x));
  }
  std::vector<double> scores;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Engine e(config_for(Policy::euboc, 1, 0.4, 100 + seed));
    e.warm_start([](const ParamVector& x) { return toy_c(x(0)); }, 20, seed);
    for (int it = 0; it < 30; ++it) {
      const auto [a, b] = e.propose();
      e.apply_feedback(toy_f(a(0)) >= toy_f(b(0)) ? Winner::i : Winner::j, toy_c(a(0)), toy_c(b(0)));
    }
    const auto inc = e.incumbent();
    scores.push_back(inc ? (toy_f(inc->x(0)) - lo) / (hi - lo) : 0.0);
  }
  std::sort(scores.begin(), scores.end());
  EXPECT_GE(0.5 * (scores[9] + scores[10]), 0.9);
}

TEST(Engine, ValidatesConfig) {
  EngineConfig cfg;
  cfg.dims = 0;
  EXPECT_THROW(Engine{cfg}, std::invalid_argument);
  cfg.dims = 2;
  cfg.raw_samples = 1;
  EXPECT_THROW(Engine{cfg}, std::invalid_argument);
  EXPECT_THROW(parse_policy("ucb"), std::invalid_argument);
  for (auto p : {Policy::euboc, Policy::euboc_cold, Policy::eubo, Policy::eubo_cons, Policy::random})
    EXPECT_EQ(parse_policy(to_string(p)), p);
}

}  // namespace
