#include "cpbo/bench/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using cpbo::Vector;
using namespace cpbo::bench;
using cpbo::engine::Winner;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

TEST(Problems, GardnerValuesAndConstants) {
  const auto p = gardner2d();
  EXPECT_DOUBLE_EQ(p.objective(v2(0, 0)), -1.0);
  EXPECT_DOUBLE_EQ(p.constraint(v2(0, 0)), -1.0);
  EXPECT_FALSE(p.feasible(v2(0, 0)));
  EXPECT_EQ(p.f_opt, 1.88875);
  EXPECT_EQ(p.f_min, -2.0);
  EXPECT_EQ(p.lambda, 0.5);
}

TEST(Problems, GardnerOptimumOnDenseGrid) {
  // Best feasible objective on a fine grid approaches the stated optimum from below.
  const auto p = gardner2d();
  double best = -1e300;
  for (int a = 0; a <= 1200; ++a)
    for (int b = 0; b <= 1200; ++b) {
      const Vector x = v2(6.0 * a / 1200, 6.0 * b / 1200);
      if (p.feasible(x)) best = std::max(best, p.objective(x));
    }
  EXPECT_NEAR(best, p.f_opt, 2e-3);
  EXPECT_LE(best, p.f_opt + 1e-5);
}

TEST(Problems, HartmannConstraintAndOptimum) {
  const auto p = hartmann6c();
  EXPECT_EQ(p.constraint(Vector::Zero(6)), 0.0);
  EXPECT_TRUE(p.feasible(Vector::Zero(6)));
  EXPECT_NEAR(p.constraint(Vector::Ones(6)), -std::sqrt(6.0), 1e-15);
  EXPECT_FALSE(p.feasible(Vector::Ones(6)));
  Vector xs(6);
  xs << 0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573;
  EXPECT_NEAR(p.objective(xs), 3.32237, 1e-5);
  EXPECT_TRUE(p.feasible(xs));
  EXPECT_EQ(p.f_opt, 3.32237);
  EXPECT_EQ(p.f_min, 0.0);
  EXPECT_EQ(p.lambda, -1.0);
}

TEST(Problems, RefMatchReferenceAndThreshold) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto inst = make_refmatch6(seed);
    const auto p = refmatch6(seed);
    EXPECT_EQ(p.objective(inst.reference), 0.0);
    EXPECT_TRUE(p.feasible(inst.reference));
    ASSERT_EQ(inst.lambda_samples.size(), 1000u);
    double sum = 0.0;
    for (const auto& x : inst.lambda_samples) {
      EXPECT_TRUE((x.array() >= 0.0).all() && (x.array() <= 1.0).all());
      sum += p.constraint(x);
    }
    EXPECT_EQ(p.lambda, sum / 1000.0);
    for (double s : inst.field.scales) {
      EXPECT_GE(s, 0.1);
      EXPECT_LE(s, 0.3);
    }
    // Max attainable gap is reached at the far corner.
    Vector corner(6);
    for (int d = 0; d < 6; ++d) corner(d) = inst.reference(d) < 0.5 ? 1.0 : 0.0;
    EXPECT_NEAR(-p.objective(corner), inst.max_gap, 1e-12);
    EXPECT_EQ(p.f_min, -inst.max_gap);
  }
}

TEST(Problems, MappingRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& p : {gardner2d(), hartmann6c(), refmatch6(4)}) {
    for (int t = 0; t < 100; ++t) {
      Vector x(p.dims);
      for (Eigen::Index d = 0; d < p.dims; ++d) x(d) = p.lo(d) + (p.hi(d) - p.lo(d)) * u(rng);
      EXPECT_LT((p.to_native(p.to_unit(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Oracle, NoiselessPicksBetter) {
  const auto p = gardner2d();
  std::mt19937_64 rng(1);
  const Vector good = v2(1.0, 0.0), bad = v2(0.0, 0.0);
  ASSERT_GT(p.objective(good), p.objective(bad));
  EXPECT_EQ(simulate_choice(p, good, bad, {}, rng), Winner::i);
  EXPECT_EQ(simulate_choice(p, bad, good, {}, rng), Winner::j);
}

TEST(Oracle, NoiselessTiesSplitEvenly) {
  const auto p = gardner2d();
  std::mt19937_64 rng(2);
  int wins = 0;
  for (int t = 0; t < 10000; ++t)
    if (simulate_choice(p, v2(0, 0), v2(0, 0), {}, rng) == Winner::i) ++wins;
  EXPECT_NEAR(wins / 10000.0, 0.5, 0.02);
}

TEST(Oracle, ThurstoneWinRate) {
  ProblemSpec p = gardner2d();
  const double sigma = 0.3;
  p.objective = [sigma](const Vector& x) { return x(0) * std::sqrt(2.0) * sigma; };
  OracleConfig o;
  o.noise = OracleConfig::Noise::thurstone;
  o.sigma_sim = sigma;
  std::mt19937_64 rng(3);
  int wins = 0;
  for (int t = 0; t < 10000; ++t)
    if (simulate_choice(p, v2(1, 0), v2(0, 0), o, rng) == Winner::i) ++wins;
  EXPECT_NEAR(wins / 10000.0, 0.8413, 0.01);
}

TEST(Oracle, Parse) {
  EXPECT_EQ(parse_oracle("noiseless").noise, OracleConfig::Noise::noiseless);
  const auto o = parse_oracle("thurstone:0.25");
  EXPECT_EQ(o.noise, OracleConfig::Noise::thurstone);
  EXPECT_EQ(o.sigma_sim, 0.25);
  EXPECT_THROW(parse_oracle("thurstone:-1"), std::invalid_argument);
  EXPECT_THROW(parse_oracle("loud"), std::invalid_argument);
}

RunRow row(double fi, double fj, bool feas_i, bool feas_j) {
  RunRow r;
  r.f_i = fi;
  r.f_j = fj;
  r.feasible_i = feas_i;
  r.feasible_j = feas_j;
  return r;
}

TEST(Metrics, GapZeroOnceOptimumFound) {
  const auto p = gardner2d();
  const std::vector<RunRow> rows{row(0.1, 0.2, false, false), row(p.f_opt, 0.0, true, false), row(0.5, 0.5, true, true)};
  const auto g = optimality_gap(rows, p);
  EXPECT_EQ(g[0], p.f_opt - p.f_min);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Metrics, GardnerNoFeasibleGap) {
  const auto p = gardner2d();
  std::vector<RunRow> rows(50, row(1.5, 1.8, false, false));
  for (double g : optimality_gap(rows, p)) EXPECT_EQ(g, 3.88875);
}

TEST(Metrics, RefMatchNoFeasibleGapIsMaxGap) {
  const auto inst = make_refmatch6(9);
  const auto p = refmatch6(9);
  std::vector<RunRow> rows(5, row(-0.1, -0.2, false, false));
  for (double g : optimality_gap(rows, p)) EXPECT_DOUBLE_EQ(g, inst.max_gap);
}

TEST(Metrics, FeasibleFractionExamples) {
  std::vector<RunRow> all(6, row(0, 0, true, true));
  for (double f : feasible_fraction(all)) EXPECT_EQ(f, 1.0);
  std::vector<RunRow> half;
  for (int k = 0; k < 6; ++k) half.push_back(row(0, 0, k % 2 == 0, k % 2 == 1));
  for (double f : feasible_fraction(half)) EXPECT_EQ(f, 0.5);
}

TEST(Metrics, RandomRecordsMatchBruteForce) {
  const auto p = gardner2d();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RunRow> rows;
    for (int k = 0; k < 40; ++k) rows.push_back(row(u(rng), u(rng), coin(rng), coin(rng)));
    const auto gap = optimality_gap(rows, p);
    const auto frac = feasible_fraction(rows);
    for (std::size_t n = 0; n < rows.size(); ++n) {
      double best = p.f_min;
      int feasible = 0;
      for (std::size_t m = 0; m <= n; ++m) {
        if (rows[m].feasible_i) best = std::max(best, rows[m].f_i), ++feasible;
        if (rows[m].feasible_j) best = std::max(best, rows[m].f_j), ++feasible;
      }
      EXPECT_EQ(gap[n], p.f_opt - best);
      EXPECT_EQ(frac[n], feasible / (2.0 * (n + 1)));
      EXPECT_GE(frac[n], 0.0);
      EXPECT_LE(frac[n], 1.0);
      if (n > 0) EXPECT_LE(gap[n], gap[n - 1]);
    }
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cpbo_bench_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

TEST(Experiment, CsvShapeAndDeterminism) {
  ExperimentConfig cfg;
  cfg.problem = "gardner2d";
  cfg.methods = {cpbo::engine::Policy::random};
  cfg.runs = 2;
  cfg.iters = 3;
  const auto dir_a = scratch_dir("a"), dir_b = scratch_dir("b");
  write_experiment(dir_a, run_experiment(cfg));
  write_experiment(dir_b, run_experiment(cfg));
  for (const char* f : {"runs.csv", "rows.csv", "summary.csv"})
    EXPECT_EQ(slurp(dir_a / f), slurp(dir_b / f)) << f;

  const auto samples = read_runs_csv(dir_a / "runs.csv");
  int gap_rows = 0, frac_rows = 0;
  for (const auto& s : samples) {
    if (s.metric == "gap") ++gap_rows;
    if (s.metric == "feasible_fraction") ++frac_rows;
  }
  EXPECT_EQ(gap_rows, 6);
  EXPECT_EQ(frac_rows, 6);
  const auto summary = summarize(samples);
  EXPECT_EQ(summary.size(), 6u);
  EXPECT_EQ(slurp(dir_a / "summary.csv").rfind("method,iter,metric,mean,std\n", 0), 0u);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST(Experiment, RowsAgreeWithGroundTruth) {
  const auto res = run_single("gardner2d", cpbo::engine::Policy::eubo_cons, 11, 6, 0, {});
  const auto p = gardner2d();
  for (const auto& r : res.record.rows) {
    EXPECT_EQ(r.feasible_i, p.feasible(r.x_i));
    EXPECT_EQ(r.feasible_j, p.feasible(r.x_j));
    EXPECT_EQ(r.c_i, p.constraint(r.x_i));
    EXPECT_EQ(r.auto_won, r.feasible_i != r.feasible_j);
    if (r.auto_won) EXPECT_EQ(r.winner, r.feasible_i ? Winner::i : Winner::j);
  }
  EXPECT_EQ(res.constraint_queries, 0u);
}

TEST(Experiment, SharedSeedsGiveSameFirstPairAcrossMethods) {
  const auto a = run_single("hartmann6", cpbo::engine::Policy::random, 3, 1, 0, {});
  const auto b = run_single("hartmann6", cpbo::engine::Policy::eubo, 3, 1, 0, {});
  EXPECT_EQ(a.record.rows[0].x_i, b.record.rows[0].x_i);
  EXPECT_EQ(a.record.rows[0].x_j, b.record.rows[0].x_j);
}

TEST(Experiment, SummaryUsesPopulationStd) {
  std::vector<MetricSample> s{{"m", 1, 1, "gap", 1.0}, {"m", 2, 1, "gap", 3.0}};
  const auto out = summarize(s);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].mean, 2.0);
  EXPECT_EQ(out[0].std, 1.0);
}

TEST(Experiment, RejectsInvalidConfig) {
  ExperimentConfig cfg;
  cfg.runs = 0;
  EXPECT_THROW(run_experiment(cfg), std::invalid_argument);
  cfg.runs = 1;
  cfg.problem = "branin";
  EXPECT_THROW(run_experiment(cfg), std::invalid_argument);
}

}  // namespace
