#ifndef CPBO_BENCH_EXPERIMENT_HPP
#define CPBO_BENCH_EXPERIMENT_HPP

#include "cpbo/bench/metrics.hpp"
#include "cpbo/bench/problems.hpp"
#include "cpbo/engine/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace cpbo::bench {

struct ExperimentConfig {
  std::string problem = "gardner2d";
  std::vector<engine::Policy> methods{engine::Policy::euboc};
  int runs = 20;
  int iters = 50;
  int warm_points = 200;
  OracleConfig oracle{};
  std::uint64_t seed = 7;
  int jobs = 1;
  /// Engine settings other than dims, policy, lambda and seed.
  engine::EngineConfig engine{};

  void validate() const {
    if (methods.empty()) throw std::invalid_argument("at least one method is required");
    if (runs <= 0) throw std::invalid_argument("runs must be positive");
    if (iters <= 0) throw std::invalid_argument("iters must be positive");
    if (warm_points < 0) throw std::invalid_argument("warm-points must be >= 0");
    if (jobs <= 0) throw std::invalid_argument("jobs must be positive");
    oracle.validate();
    make_problem(problem, seed).validate();
  }
};

struct RunResult {
  RunRecord record;
  std::size_t constraint_queries = 0;
};

/// Executes one engine loop against the simulated chooser.
inline RunResult run_single(const std::string& problem_name, engine::Policy policy, std::uint64_t run_seed,
                            int iters, int warm_points, const OracleConfig& oracle,
                            const engine::EngineConfig& base = {}) {
  const ProblemSpec problem = make_problem(problem_name, run_seed);
  engine::EngineConfig cfg = base;
  cfg.dims = problem.dims;
  cfg.policy = policy;
  cfg.lambda = problem.lambda;
  cfg.seed = run_seed;
  engine::Engine eng(cfg);
  auto unit_constraint = [&problem](const ParamVector& u) { return problem.constraint(problem.to_native(u)); };
  if (policy == engine::Policy::euboc) eng.warm_start(unit_constraint, warm_points, mix_seed(run_seed, 0x7761726dULL));

  std::mt19937_64 chooser(mix_seed(run_seed, 0x63686f6f7365ULL));
  RunResult result;
  result.record.method = engine::to_string(policy);
  result.record.seed = run_seed;
  for (int n = 1; n <= iters; ++n) {
    const auto [ui, uj] = eng.propose();
    RunRow row;
    row.n = n;
    row.x_i = problem.to_native(ui);
    row.x_j = problem.to_native(uj);
    row.c_i = problem.constraint(row.x_i);
    row.c_j = problem.constraint(row.x_j);
    row.f_i = problem.objective(row.x_i);
    row.f_j = problem.objective(row.x_j);
    row.feasible_i = row.c_i >= problem.lambda;
    row.feasible_j = row.c_j >= problem.lambda;
    std::optional<engine::Winner> auto_winner;
    if (policy == engine::Policy::eubo_cons) auto_winner = engine::auto_win_rule(row.c_i, row.c_j, problem.lambda);
    row.auto_won = auto_winner.has_value();
    row.winner = auto_winner ? *auto_winner : simulate_choice(problem, row.x_i, row.x_j, oracle, chooser);
    eng.apply_feedback(row.winner, row.c_i, row.c_j, row.auto_won);
    result.record.rows.push_back(std::move(row));
  }
  annotate_metrics(result.record.rows, problem);
  result.constraint_queries = eng.constraint_queries();
  return result;
}

/// Runs every (method, replicate) combination. Replicate r of every method
/// uses seed + r, so methods share problem instances and initial pairs.
inline std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                             const std::function<void(const RunResult&)>& on_done = {}) {
  cfg.validate();
  struct Task {
    engine::Policy policy;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto m : cfg.methods)
    for (int r = 0; r < cfg.runs; ++r) tasks.push_back({m, cfg.seed + static_cast<std::uint64_t>(r)});

  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      try {
        results[k] = run_single(cfg.problem, tasks[k].policy, tasks[k].seed, cfg.iters, cfg.warm_points,
                                cfg.oracle, cfg.engine);
        if (on_done) {
          std::lock_guard<std::mutex> lock(done_mutex);
          on_done(results[k]);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(done_mutex);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
      }
    }
  };
  const int threads = std::min<int>(cfg.jobs, static_cast<int>(tasks.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SummaryRow {
  std::string method;
  int iter = 0;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

/// Long-format metric stream: one (method, seed, iter, metric, value) per line.
struct MetricSample {
  std::string method;
  std::uint64_t seed = 0;
  int iter = 0;
  std::string metric;
  double value = 0.0;
};

inline std::vector<MetricSample> metric_samples(const std::vector<RunResult>& results) {
  std::vector<MetricSample> out;
  for (const auto& res : results)
    for (const auto& row : res.record.rows) {
      out.push_back({res.record.method, res.record.seed, row.n, "gap", row.gap});
      out.push_back({res.record.method, res.record.seed, row.n, "feasible_fraction", row.feasible_fraction});
    }
  return out;
}

/// Per-iteration mean and population standard deviation, in order of first appearance.
inline std::vector<SummaryRow> summarize(const std::vector<MetricSample>& samples) {
  std::vector<std::string> method_order;
  std::vector<std::string> metric_order;
  std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
  int max_iter = 0;
  for (const auto& s : samples) {
    if (std::find(method_order.begin(), method_order.end(), s.method) == method_order.end())
      method_order.push_back(s.method);
    if (std::find(metric_order.begin(), metric_order.end(), s.metric) == metric_order.end())
      metric_order.push_back(s.metric);
    groups[{s.method, s.metric, s.iter}].push_back(s.value);
    max_iter = std::max(max_iter, s.iter);
  }
  std::vector<SummaryRow> out;
  for (const auto& method : method_order)
    for (int it = 1; it <= max_iter; ++it)
      for (const auto& metric : metric_order) {
        auto g = groups.find({method, metric, it});
        if (g == groups.end()) continue;
        const auto& v = g->second;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        out.push_back({method, it, metric, mean, std::sqrt(var)});
      }
  return out;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

inline void write_runs_csv(const std::filesystem::path& path, const std::vector<MetricSample>& samples) {
  auto os = open_output(path);
  os << "method,seed,iter,metric,value\n";
  for (const auto& s : samples)
    os << s.method << ',' << s.seed << ',' << s.iter << ',' << s.metric << ',' << format_number(s.value) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void write_rows_csv(const std::filesystem::path& path, const std::vector<RunResult>& results) {
  auto os = open_output(path);
  const Eigen::Index dims = results.empty() || results.front().record.rows.empty()
                                ? 0
                                : results.front().record.rows.front().x_i.size();
  os << "method,seed,iter";
  for (Eigen::Index d = 0; d < dims; ++d) os << ",xi_" << d;
  for (Eigen::Index d = 0; d < dims; ++d) os << ",xj_" << d;
  os << ",winner,c_i,c_j,f_i,f_j,feasible_i,feasible_j,auto_won,gap,feasible_fraction\n";
  for (const auto& res : results)
    for (const auto& r : res.record.rows) {
      os << res.record.method << ',' << res.record.seed << ',' << r.n;
      for (Eigen::Index d = 0; d < dims; ++d) os << ',' << format_number(r.x_i(d));
      for (Eigen::Index d = 0; d < dims; ++d) os << ',' << format_number(r.x_j(d));
      os << ',' << engine::to_string(r.winner) << ',' << format_number(r.c_i) << ',' << format_number(r.c_j)
         << ',' << format_number(r.f_i) << ',' << format_number(r.f_j) << ',' << r.feasible_i << ','
         << r.feasible_j << ',' << r.auto_won << ',' << format_number(r.gap) << ','
         << format_number(r.feasible_fraction) << '\n';
    }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  auto os = open_output(path);
  os << "method,iter,metric,mean,std\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.iter << ',' << r.metric << ',' << format_number(r.mean) << ','
       << format_number(r.std) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<MetricSample> read_runs_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "method,seed,iter,metric,value")
    throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<MetricSample> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      out.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), f[3], std::stod(f[4])});
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

/// Writes runs.csv, rows.csv and summary.csv into `dir`.
inline void write_experiment(const std::filesystem::path& dir, const std::vector<RunResult>& results) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto samples = metric_samples(results);
  write_runs_csv(dir / "runs.csv", samples);
  write_rows_csv(dir / "rows.csv", results);
  write_summary_csv(dir / "summary.csv", summarize(samples));
}

}  // namespace cpbo::bench

#endif
