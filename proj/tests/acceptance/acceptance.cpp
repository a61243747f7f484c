#include "cpbo/acq/eubo.hpp"
#include "cpbo/bench/experiment.hpp"
#include "cpbo/pref/preference_gp.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace cpbo;
using engine::Policy;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Report {
 public:
  explicit Report(std::vector<std::string> only) : only_(std::move(only)) {}

  bool wanted(const std::string& name) const {
    if (only_.empty()) return true;
    for (const auto& o : only_)
      if (name.find(o) != std::string::npos) return true;
    return false;
  }

  void record(const std::string& name, const Outcome& o, double seconds) {
    std::printf("%s  %-28s %s  (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), seconds);
    std::fflush(stdout);
    if (!o.pass) ++failures_;
  }

  template <class F>
  void run(const std::string& name, F&& check) {
    if (!wanted(name)) return;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    record(name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  int failures() const { return failures_; }

 private:
  std::vector<std::string> only_;
  int failures_ = 0;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Closed forms against Monte Carlo

Outcome check_eubo_monte_carlo() {
  std::mt19937_64 rng(20240501);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(0.05, 1.0), rho(-0.9, 0.9);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const double mu_i = mean(rng), mu_j = mean(rng), s_i = sd(rng), s_j = sd(rng), r = rho(rng);
    const double delta = mu_i - mu_j;
    const double sigma = std::sqrt(s_i * s_i + s_j * s_j - 2.0 * r * s_i * s_j);
    const double closed = acq::eubo({delta, sigma, mu_j});
    // 10^6 draws as 5e5 antithetic pairs of the joint Gaussian.
    double sum = 0.0;
    const int pairs = 500000;
    for (int s = 0; s < pairs; ++s) {
      const double z1 = z(rng), z2 = z(rng);
      const double a = s_i * z1;
      const double b = s_j * (r * z1 + std::sqrt(1.0 - r * r) * z2);
      sum += std::max(mu_i + a, mu_j + b) + std::max(mu_i - a, mu_j - b);
    }
    worst = std::max(worst, std::abs(closed - sum / (2.0 * pairs)));
  }
  return {worst <= 3e-3, fmt("max |eubo - MC| = %.2e over 50 cases (tol 3e-3)", worst)};
}

Outcome check_feasibility_monte_carlo() {
  std::mt19937_64 rng(20240502);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(0.1, 2.0), lam(-1.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const double mu_i = mean(rng), mu_j = mean(rng), s_i = sd(rng), s_j = sd(rng), lambda = lam(rng);
    const double approx = acq::feasibility_prob(mu_i, s_i, mu_j, s_j, lambda);
    long hits = 0;
    const int n = 1000000;
    for (int s = 0; s < n; ++s)
      if (mu_i + s_i * z(rng) >= lambda && mu_j + s_j * z(rng) >= lambda) ++hits;
    worst = std::max(worst, std::abs(approx - static_cast<double>(hits) / n));
  }
  return {worst <= 0.01, fmt("max |prob - MC| = %.2e over 50 cases (tol 0.01)", worst)};
}

Outcome check_laplace_oracle() {
  auto v1 = [](double x) {
    Vector v(1);
    v << x;
    return v;
  };
  pref::PreferenceDataset ds(1, 1.0);
  const auto a = ds.add_point(v1(0.0));
  const auto b = ds.add_point(v1(0.5));
  const auto c = ds.add_point(v1(1.0));
  ds.add_comparison(a, b);
  ds.add_comparison(b, c);
  ds.add_comparison(a, c);
  const auto kernel = gp::KernelSpec::isotropic(gp::KernelKind::squared_exponential, 1, 0.3, 0.5);
  const auto lp = pref::laplace_fit(ds, kernel);

  const Matrix K = gp::gram(kernel, ds.points_matrix()) + 1e-9 * Matrix::Identity(3, 3);
  const Matrix L = K.llt().matrixL();
  const int G = 81;
  std::vector<double> logw;
  std::vector<Vector> fs;
  double maxlw = -1e300;
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j)
      for (int k = 0; k < G; ++k) {
        Vector zz(3);
        zz << -4 + 8.0 * i / (G - 1), -4 + 8.0 * j / (G - 1), -4 + 8.0 * k / (G - 1);
        const Vector f = L * zz;
        double lw = -0.5 * zz.squaredNorm();
        for (const auto& cmp : ds.comparisons())
          lw += log_normal_cdf((f(static_cast<Eigen::Index>(cmp.winner)) - f(static_cast<Eigen::Index>(cmp.loser))) /
                               std::numbers::sqrt2);
        logw.push_back(lw);
        fs.push_back(f);
        maxlw = std::max(maxlw, lw);
      }
  double wsum = 0.0;
  Vector fsum = Vector::Zero(3);
  for (std::size_t s = 0; s < logw.size(); ++s) {
    const double w = std::exp(logw[s] - maxlw);
    wsum += w;
    fsum += w * fs[s];
  }
  const Vector post = fsum / wsum;
  const double err = (lp.map_latents - post).cwiseAbs().maxCoeff();
  const bool pass = lp.converged && err <= 0.05 && lp.grad_norm <= 1e-6;
  return {pass, fmt("max |MAP - quadrature mean| = %.4f (tol 0.05), grad norm %.1e (tol 1e-6)", err, lp.grad_norm)};
}

Outcome check_constants() {
  const auto g = bench::gardner2d();
  const auto h = bench::hartmann6c();
  std::vector<bench::RunRow> rows(50);
  const auto gaps = bench::optimality_gap(rows, g);
  bool flat = true;
  for (double v : gaps) flat = flat && v == 3.88875;
  const bool pass = g.f_opt == 1.88875 && g.f_min == -2.0 && g.lambda == 0.5 && h.f_opt == 3.32237 &&
                    h.f_min == 0.0 && h.lambda == -1.0 && flat;
  return {pass, fmt("gardner2d (%.5f, %.1f, %.1f), hartmann6c (%.5f, %.1f, %.1f), no-feasible gap %.5f", g.f_opt,
                    g.f_min, g.lambda, h.f_opt, h.f_min, h.lambda, gaps.back())};
}

// ---------------------------------------------------------------------------
// Benchmarks

struct Experiment {
  std::vector<bench::RunResult> results;
  std::vector<bench::SummaryRow> summary;

  double mean(const std::string& method, const std::string& metric, int iter) const {
    for (const auto& r : summary)
      if (r.method == method && r.metric == metric && r.iter == iter) return r.mean;
    throw std::runtime_error("no summary for " + method + " " + metric + " " + std::to_string(iter));
  }
};

Experiment run(const std::string& problem, std::vector<Policy> methods, int warm_points, int jobs) {
  bench::ExperimentConfig cfg;
  cfg.problem = problem;
  cfg.methods = std::move(methods);
  cfg.runs = 20;
  cfg.iters = 50;
  cfg.warm_points = warm_points;
  cfg.jobs = jobs;
  const auto start = std::chrono::steady_clock::now();
  Experiment e;
  e.results = bench::run_experiment(cfg);
  e.summary = bench::summarize(bench::metric_samples(e.results));
  std::fprintf(stderr, "  [%s, warm %d: %.0f s]\n", problem.c_str(), warm_points,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return e;
}

Outcome check_gardner(const Experiment& e) {
  double min_ff = 1.0;
  for (int it = 1; it <= 50; ++it) min_ff = std::min(min_ff, e.mean("euboc", "feasible_fraction", it));
  const double g_euboc = e.mean("euboc", "gap", 50);
  const double g_cold = e.mean("euboc-cold", "gap", 50);
  const double g_eubo = e.mean("eubo", "gap", 50);
  const double g_rand = e.mean("random", "gap", 50);
  const double cold5 = e.mean("euboc-cold", "feasible_fraction", 5);
  const double cold50 = e.mean("euboc-cold", "feasible_fraction", 50);
  const bool a = min_ff >= 0.95;
  const bool b = g_euboc <= g_cold && g_cold <= std::min(g_eubo, g_rand) && g_euboc <= 0.5 * g_rand;
  const bool c = cold50 > cold5;
  return {a && b && c,
          fmt("(a) %s min euboc ff %.3f; (b) %s gaps euboc %.4f cold %.4f eubo %.4f random %.4f; "
              "(c) %s cold ff %.3f -> %.3f",
              a ? "ok" : "NO", min_ff, b ? "ok" : "NO", g_euboc, g_cold, g_eubo, g_rand, c ? "ok" : "NO", cold5,
              cold50)};
}

Outcome check_purity(const Experiment& e) {
  std::size_t baseline_queries = 0, euboc_queries = 0, auto_rows = 0, violations = 0;
  for (const auto& r : e.results) {
    const auto policy = engine::parse_policy(r.record.method);
    if (policy == Policy::eubo || policy == Policy::random) baseline_queries += r.constraint_queries;
    if (policy == Policy::euboc) euboc_queries += r.constraint_queries;
    if (policy != Policy::eubo_cons) continue;
    for (const auto& row : r.record.rows) {
      const bool one_feasible = row.feasible_i != row.feasible_j;
      if (row.auto_won != one_feasible) ++violations;
      if (row.auto_won) {
        ++auto_rows;
        const bool winner_feasible = row.winner == engine::Winner::i ? row.feasible_i : row.feasible_j;
        if (!winner_feasible) ++violations;
      }
    }
  }
  const bool pass = baseline_queries == 0 && euboc_queries > 0 && violations == 0 && auto_rows > 0;
  return {pass, fmt("eubo+random constraint queries %zu (euboc %zu); eubo-cons auto-wins %zu, rule violations %zu",
                    baseline_queries, euboc_queries, auto_rows, violations)};
}

Outcome check_warm_sensitivity(const Experiment& warm200, const Experiment& warm50) {
  const double g200 = warm200.mean("euboc", "gap", 50);
  const double g50 = warm50.mean("euboc", "gap", 50);
  return {g50 <= 1.25 * g200,
          fmt("euboc final gap warm 50 %.4f vs warm 200 %.4f (ratio %.2f, tol 1.25)", g50, g200, g50 / g200)};
}

Outcome check_feasible_and_better(const Experiment& e, double min_ff) {
  const double ff = e.mean("euboc", "feasible_fraction", 50);
  const double g = e.mean("euboc", "gap", 50);
  const double gr = e.mean("random", "gap", 50);
  return {ff >= min_ff && g < gr,
          fmt("euboc ff@50 %.3f (min %.2f); final gap euboc %.4f vs random %.4f", ff, min_ff, g, gr)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome check_determinism(const std::string& bench_exe) {
  if (bench_exe.empty()) return {false, "no bench executable given (--bench)"};
  const auto root = std::filesystem::temp_directory_path() / ("cpbo-accept-" + std::to_string(::getpid()));
  std::filesystem::remove_all(root);
  std::vector<std::string> files{"runs.csv", "rows.csv", "summary.csv"};
  std::string outputs[2];
  for (int k = 0; k < 2; ++k) {
    const auto dir = root / ("out" + std::to_string(k));
    const std::string cmd = "\"" + bench_exe +
                            "\" run --problem gardner2d --methods euboc,euboc-cold,eubo,eubo-cons,random"
                            " --runs 2 --iters 8 --warm-points 50 --oracle thurstone:0.1 --seed 3 --quiet --out \"" +
                            dir.string() + "\"";
    if (std::system(cmd.c_str()) != 0) return {false, "bench run failed: " + cmd};
    for (const auto& f : files) outputs[k] += slurp(dir / f) + '\x1f';
  }
  std::filesystem::remove_all(root);
  const bool same = outputs[0] == outputs[1] && outputs[0].size() > 3;
  return {same, fmt("two bench runs, %zu bytes of CSV, %s", outputs[0].size(), same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; one PASS/FAIL line per criterion"};
  std::string bench_exe;
  std::vector<std::string> only;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--bench", bench_exe, "path to the bench executable");
  app.add_option("--only", only, "run only criteria whose name contains one of these");
  app.add_option("--jobs", jobs, "worker threads for the benchmark runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  Report report(only);
  report.run("eubo-closed-form", check_eubo_monte_carlo);
  report.run("feasibility-approximation", check_feasibility_monte_carlo);
  report.run("laplace-oracle", check_laplace_oracle);
  report.run("problem-constants", check_constants);

  const bool need_gardner = report.wanted("gardner2d") || report.wanted("warm-start") || report.wanted("purity");
  std::optional<Experiment> gardner;
  if (need_gardner) {
    const auto start = std::chrono::steady_clock::now();
    gardner = run("gardner2d", {Policy::euboc, Policy::euboc_cold, Policy::eubo, Policy::eubo_cons, Policy::random},
                  200, jobs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report.wanted("gardner2d")) report.record("gardner2d-reproduction", check_gardner(*gardner), secs);
  }
  report.run("baseline-purity", [&] { return check_purity(*gardner); });
  report.run("warm-start-sensitivity", [&] {
    return check_warm_sensitivity(*gardner, run("gardner2d", {Policy::euboc}, 50, jobs));
  });
  report.run("hartmann6-reproduction", [&] {
    return check_feasible_and_better(run("hartmann6", {Policy::euboc, Policy::random}, 200, jobs), 0.8);
  });
  report.run("refmatch6", [&] {
    return check_feasible_and_better(run("refmatch6", {Policy::euboc, Policy::random}, 1000, jobs), 0.7);
  });
  report.run("determinism", [&] { return check_determinism(bench_exe); });

  std::printf("%s: %d failing criteria\n", report.failures() == 0 ? "ALL PASS" : "SOME FAIL", report.failures());
  return report.failures() == 0 ? 0 : 1;
}
