#ifndef CPBO_OPT_BOX_LBFGS_HPP
#define CPBO_OPT_BOX_LBFGS_HPP

#include "cpbo/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cpbo::opt {

/// Objective callback: returns f(x) and writes the gradient into `grad`.
using GradientObjective = std::function<double(const Vector& x, Vector& grad)>;

struct BoxLbfgsOptions {
  int memory = 10;
  int max_iterations = 100;
  int max_line_search = 30;
  double projected_gradient_tol = 1e-6;
  /// Stop once the relative decrease of one iteration falls below this.
  double relative_decrease_tol = 1e-10;
  double armijo = 1e-4;
};

struct BoxLbfgsResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Projected-gradient L-BFGS for min f(x) s.t. lo <= x <= hi.
///
/// The search direction is the two-loop L-BFGS direction with components
/// pinned at an active bound zeroed. The step follows the projected path
/// x(t) = P(x + t d) with Armijo backtracking. Curvature pairs failing
/// s'y > 0 are skipped, and a failed line search resets the memory once
/// before giving up.
inline BoxLbfgsResult minimize_box(const GradientObjective& fn, const Vector& x0, const Vector& lo,
                                   const Vector& hi, const BoxLbfgsOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  if (lo.size() != n || hi.size() != n)
    throw std::invalid_argument("minimize_box: bound dimension mismatch");
  if ((lo.array() > hi.array()).any()) throw std::invalid_argument("minimize_box: lo > hi");

  auto project = [&](const Vector& v) -> Vector { return v.cwiseMax(lo).cwiseMin(hi); };

  BoxLbfgsResult res;
  Vector x = project(x0);
  Vector g(n);
  double fx = fn(x, g);
  ++res.evaluations;
  if (!std::isfinite(fx) || !g.allFinite()) {
    res.x = x;
    res.value = fx;
    return res;
  }

  std::deque<Vector> s_hist;
  std::deque<Vector> y_hist;
  std::deque<double> rho_hist;

  auto active = [&](Eigen::Index i, const Vector& grad) {
    return (x(i) <= lo(i) && grad(i) > 0.0) || (x(i) >= hi(i) && grad(i) < 0.0);
  };

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    Vector pg = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active(i, g)) pg(i) = 0.0;
    if (pg.lpNorm<Eigen::Infinity>() <= opts.projected_gradient_tol) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vector d;
      if (s_hist.empty()) {
        d = -pg;
      } else {
        // two-loop recursion
        Vector q = pg;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
          alpha[k] = rho_hist[k] * s_hist[k].dot(q);
          q -= alpha[k] * y_hist[k];
        }
        const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        q *= gamma;
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
          const double beta = rho_hist[k] * y_hist[k].dot(q);
          q += (alpha[k] - beta) * s_hist[k];
        }
        d = -q;
        for (Eigen::Index i = 0; i < n; ++i)
          if (active(i, g)) d(i) = 0.0;
        if (g.dot(d) >= 0.0) d = -pg;
      }

      double t = s_hist.empty() ? std::min(1.0, 1.0 / pg.norm()) : 1.0;
      Vector x_new(n);
      Vector g_new(n);
      double f_new = fx;
      for (int ls = 0; ls < opts.max_line_search; ++ls, t *= 0.5) {
        x_new = project(x + t * d);
        const Vector step = x_new - x;
        if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
        f_new = fn(x_new, g_new);
        ++res.evaluations;
        if (std::isfinite(f_new) && g_new.allFinite() &&
            f_new <= fx + opts.armijo * g.dot(step)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (s_hist.empty()) break;
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }

      const Vector s = x_new - x;
      const Vector y = g_new - g;
      const double sy = s.dot(y);
      if (sy > 1e-10 * y.squaredNorm()) {
        s_hist.push_back(s);
        y_hist.push_back(y);
        rho_hist.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > opts.memory) {
          s_hist.pop_front();
          y_hist.pop_front();
          rho_hist.pop_front();
        }
      }
      const double decrease = fx - f_new;
      const double scale = std::max({std::abs(fx), std::abs(f_new), 1.0});
      x = x_new;
      g = g_new;
      fx = f_new;
      if (decrease <= opts.relative_decrease_tol * scale) {
        res.converged = true;
        ++res.iterations;
        res.x = x;
        res.value = fx;
        return res;
      }
    }
    if (!accepted) break;
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace cpbo::opt

#endif
