#include "cpbo/bench/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::vector<cpbo::engine::Policy> parse_methods(const std::string& list) {
  std::vector<cpbo::engine::Policy> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(cpbo::engine::parse_policy(item));
  return out;
}

void print_final(const std::vector<cpbo::bench::SummaryRow>& summary) {
  int last = 0;
  for (const auto& r : summary) last = std::max(last, r.iter);
  for (const auto& r : summary)
    if (r.iter == last)
      std::cout << r.method << "  iter " << r.iter << "  " << r.metric << "  mean " << r.mean << "  std " << r.std
                << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained preferential BO benchmark harness"};
  app.require_subcommand(1);

  cpbo::bench::ExperimentConfig cfg;
  std::string methods = "euboc,euboc-cold,eubo,eubo-cons,random";
  std::string oracle = "noiseless";
  std::string out_dir;
  int warm_points = -1;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run an experiment and write CSV files");
  run->add_option("--problem", cfg.problem, "gardner2d | hartmann6 | refmatch6")->capture_default_str();
  run->add_option("--methods", methods, "comma-separated policies")->capture_default_str();
  run->add_option("--iters", cfg.iters, "iterations per run")->capture_default_str();
  run->add_option("--runs", cfg.runs, "replicates per method")->capture_default_str();
  run->add_option("--warm-points", warm_points, "warm-start size (default 200, or 1000 for refmatch6)");
  run->add_option("--oracle", oracle, "noiseless | thurstone:<sigma>")->capture_default_str();
  run->add_option("--seed", cfg.seed, "base seed; replicate r uses seed + r")->capture_default_str();
  run->add_option("--jobs", cfg.jobs, "worker threads")->capture_default_str();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("--quiet", quiet, "suppress progress output");

  std::string summarize_dir;
  auto* summarize = app.add_subcommand("summarize", "recompute summary.csv from runs.csv");
  summarize->add_option("dir", summarize_dir, "experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*run) {
    try {
      cfg.methods = parse_methods(methods);
      cfg.oracle = cpbo::bench::parse_oracle(oracle);
      cfg.warm_points = warm_points >= 0 ? warm_points : (cfg.problem == "refmatch6" ? 1000 : 200);
      cfg.validate();
    } catch (const std::exception& e) {
      std::cerr << "bench: invalid configuration: " << e.what() << '\n';
      return 2;
    }
    try {
      const auto start = std::chrono::steady_clock::now();
      std::size_t done = 0;
      const std::size_t total = cfg.methods.size() * static_cast<std::size_t>(cfg.runs);
      const auto results = cpbo::bench::run_experiment(cfg, [&](const cpbo::bench::RunResult& r) {
        ++done;
        if (!quiet) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          std::cerr << "[" << done << "/" << total << "] " << r.record.method << " seed " << r.record.seed
                    << " final gap " << r.record.rows.back().gap << " (" << secs << " s)\n";
        }
      });
      cpbo::bench::write_experiment(out_dir, results);
      if (!quiet) print_final(cpbo::bench::summarize(cpbo::bench::metric_samples(results)));
    } catch (const std::exception& e) {
      std::cerr << "bench: " << e.what() << '\n';
      return 1;
    }
    return 0;
  }

  try {
    const std::filesystem::path dir = summarize_dir;
    const auto summary = cpbo::bench::summarize(cpbo::bench::read_runs_csv(dir / "runs.csv"));
    cpbo::bench::write_summary_csv(dir / "summary.csv", summary);
    print_final(summary);
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
