#ifndef CPBO_ACQ_MAXIMIZE_HPP
#define CPBO_ACQ_MAXIMIZE_HPP

#include "cpbo/acq/eubo.hpp"
#include "cpbo/gp/regression.hpp"
#include "cpbo/opt/box_lbfgs.hpp"
#include "cpbo/pref/preference_gp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace cpbo::acq {

enum class AcqPolicy { eubo, euboc };

enum class GradientMode { analytic, finite_difference };

struct AcqConfig {
  double lambda = 0.0;
  int num_restarts = 3;
  int raw_samples = 512;
  double sigma_floor = kDefaultSigmaFloor;
  std::uint64_t seed = 0;
  int max_iterations = 100;
  GradientMode gradient = GradientMode::analytic;
  double fd_step = 1e-6;

  void validate() const {
    if (num_restarts <= 0 || raw_samples <= 0)
      throw std::invalid_argument("AcqConfig: num_restarts and raw_samples must be positive");
    if (raw_samples < num_restarts) throw std::invalid_argument("AcqConfig: raw_samples < num_restarts");
    if (!(sigma_floor > 0.0)) throw std::invalid_argument("AcqConfig: sigma_floor must be positive");
    if (!std::isfinite(lambda)) throw std::invalid_argument("AcqConfig: lambda must be finite");
  }
};

struct PairProposal {
  ParamVector x_i;
  ParamVector x_j;
  double value = 0.0;
  /// Number of constraint-surrogate predictions issued during the search.
  std::size_t constraint_queries = 0;
};

/// The acquisition surface over concatenated pairs z = (x_i, x_j) in [0,1]^{2N}.
class PairAcquisition {
 public:
  PairAcquisition(const pref::PreferenceModel& objective, const gp::GPModel* constraint, AcqPolicy policy,
                  double lambda, double sigma_floor)
      : objective_(objective), constraint_(policy == AcqPolicy::euboc ? constraint : nullptr),
        lambda_(lambda), sigma_floor_(sigma_floor) {
    if (constraint_ && constraint_->dims() != objective.dims())
      throw std::invalid_argument("PairAcquisition: model dimensions differ");
  }

  Eigen::Index dims() const { return objective_.dims(); }
  std::size_t constraint_queries() const { return constraint_queries_; }

  /// Value at z; writes d value / dz when grad != nullptr.
  double operator()(const Vector& z, Vector* grad = nullptr) const {
    const Eigen::Index n = dims();
    const Vector a = z.head(n);
    const Vector b = z.tail(n);
    const auto pm = objective_.pair_moments(a, b, grad != nullptr);

    const double delta = pm.mean_a - pm.mean_b;
    const double var = pm.var_a + pm.var_b - 2.0 * pm.cov_ab;
    const double raw_sigma = std::sqrt(std::max(var, 0.0));
    const bool floored = raw_sigma <= sigma_floor_;
    const PairStats ps{delta, floored ? sigma_floor_ : raw_sigma, pm.mean_b};
    const double e = eubo(ps);

    double pa = 1.0, pb = 1.0;
    Vector dpa, dpb;
    if (constraint_) {
      pa = feasibility_with_gradient(a, grad ? &dpa : nullptr);
      pb = feasibility_with_gradient(b, grad ? &dpb : nullptr);
    }
    const double value = pa * pb * e;

    if (grad) {
      const double u = ps.delta / ps.sigma_pair;
      const double de_ddelta = normal_cdf(u);
      const double de_dsigma = normal_pdf(u);
      Vector de_da = de_ddelta * pm.dmean_a;
      Vector de_db = -de_ddelta * pm.dmean_b + pm.dmean_b;
      if (!floored) {
        de_da += de_dsigma * (pm.dvar_a - 2.0 * pm.dcov_da) / (2.0 * ps.sigma_pair);
        de_db += de_dsigma * (pm.dvar_b - 2.0 * pm.dcov_db) / (2.0 * ps.sigma_pair);
      }
      grad->resize(2 * n);
      grad->head(n) = pa * pb * de_da;
      grad->tail(n) = pa * pb * de_db;
      if (constraint_) {
        grad->head(n) += pb * e * dpa;
        grad->tail(n) += pa * e * dpb;
      }
    }
    return value;
  }

  /// Values for the rows of `pairs` (each row is a concatenated pair).
  Vector batch(const Matrix& pairs) const {
    const Eigen::Index n = dims();
    Vector out(pairs.rows());
    Vector feas = Vector::Ones(pairs.rows());
    if (constraint_) {
      Matrix stacked(2 * pairs.rows(), n);
      stacked.topRows(pairs.rows()) = pairs.leftCols(n);
      stacked.bottomRows(pairs.rows()) = pairs.rightCols(n);
      Vector means, vars;
      constraint_->predict_marginals(stacked, means, vars);
      constraint_queries_ += static_cast<std::size_t>(stacked.rows());
      for (Eigen::Index r = 0; r < pairs.rows(); ++r)
        feas(r) = feasibility_prob(means(r), std::sqrt(vars(r)), means(r + pairs.rows()),
                                   std::sqrt(vars(r + pairs.rows())), lambda_);
    }
    for (Eigen::Index r = 0; r < pairs.rows(); ++r) {
      const Vector a = pairs.row(r).head(n).transpose();
      const Vector b = pairs.row(r).tail(n).transpose();
      const auto pm = objective_.pair_moments(a, b, false);
      const double var = pm.var_a + pm.var_b - 2.0 * pm.cov_ab;
      const PairStats ps{pm.mean_a - pm.mean_b, std::max(sigma_floor_, std::sqrt(std::max(var, 0.0))), pm.mean_b};
      out(r) = feas(r) * eubo(ps);
    }
    return out;
  }

 private:
  double feasibility_with_gradient(const Vector& x, Vector* grad) const {
    double mu = 0.0, var = 0.0;
    Vector dmu, dvar;
    constraint_->predict_marginal(x, mu, var, grad ? &dmu : nullptr, grad ? &dvar : nullptr);
    ++constraint_queries_;
    const double sd = std::sqrt(var);
    if (sd <= 0.0) {
      if (grad) *grad = Vector::Zero(x.size());
      return mu >= lambda_ ? 1.0 : 0.0;
    }
    const double t = (mu - lambda_) / sd;
    if (grad) {
      const double phi = normal_pdf(t);
      *grad = phi / sd * dmu - phi * t / (2.0 * var) * dvar;
    }
    return feasibility_factor(mu, sd, lambda_);
  }

  const pref::PreferenceModel& objective_;
  const gp::GPModel* constraint_;
  double lambda_;
  double sigma_floor_;
  mutable std::size_t constraint_queries_ = 0;
};

namespace detail {

inline Vector central_difference(const PairAcquisition& acq, const Vector& z, double h) {
  Vector g(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vector up = z, down = z;
    up(i) = std::min(1.0, z(i) + h);
    down(i) = std::max(0.0, z(i) - h);
    g(i) = (acq(up) - acq(down)) / (up(i) - down(i));
  }
  return g;
}

}  // namespace detail

/// Maximizes EUBO or EUBOC jointly over the pair: uniform raw samples, the
/// best num_restarts as starts, box-constrained quasi-Newton ascent from each.
/// Equal final values go to the lowest restart index.
inline PairProposal maximize_pair(const pref::PreferenceModel& objective, const gp::GPModel* constraint,
                                  const AcqConfig& cfg, AcqPolicy policy) {
  cfg.validate();
  const Eigen::Index n = objective.dims();
  const PairAcquisition acq(objective, constraint, policy, cfg.lambda, cfg.sigma_floor);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix raw(cfg.raw_samples, 2 * n);
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    for (Eigen::Index c = 0; c < raw.cols(); ++c) raw(r, c) = unif(rng);
  const Vector raw_values = acq.batch(raw);

  std::vector<Eigen::Index> order;
  for (Eigen::Index r = 0; r < raw_values.size(); ++r)
    if (std::isfinite(raw_values(r))) order.push_back(r);
  if (order.empty()) throw numerical_error("maximize_pair: acquisition is non-finite at every raw sample");
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index l, Eigen::Index r) { return raw_values(l) > raw_values(r); });

  const Vector lo = Vector::Zero(2 * n);
  const Vector hi = Vector::Ones(2 * n);
  opt::BoxLbfgsOptions lopts;
  lopts.max_iterations = cfg.max_iterations;
  lopts.projected_gradient_tol = 1e-7;
  lopts.relative_decrease_tol = 1e-10;

  auto negated = [&](const Vector& z, Vector& g) {
    double v;
    if (cfg.gradient == GradientMode::analytic) {
      v = acq(z, &g);
    } else {
      v = acq(z);
      g = detail::central_difference(acq, z, cfg.fd_step);
    }
    g = -g;
    return -v;
  };

  PairProposal best;
  best.value = -std::numeric_limits<double>::infinity();
  const int starts = std::min<int>(cfg.num_restarts, static_cast<int>(order.size()));
  for (int s = 0; s < starts; ++s) {
    const Vector z0 = raw.row(order[static_cast<std::size_t>(s)]).transpose();
    const auto res = opt::minimize_box(negated, z0, lo, hi, lopts);
    double value = -res.value;
    Vector z = res.x;
    if (!std::isfinite(value) || value < raw_values(order[static_cast<std::size_t>(s)])) {
      z = z0;
      value = raw_values(order[static_cast<std::size_t>(s)]);
    }
    if (value > best.value) {
      best.value = value;
      best.x_i = z.head(n);
      best.x_j = z.tail(n);
    }
  }
  best.constraint_queries = acq.constraint_queries();
  return best;
}

}  // namespace cpbo::acq

#endif
