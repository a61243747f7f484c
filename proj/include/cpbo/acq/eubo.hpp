#ifndef CPBO_ACQ_EUBO_HPP
#define CPBO_ACQ_EUBO_HPP

#include "cpbo/core/normal.hpp"
#include "cpbo/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cpbo::acq {

inline constexpr double kDefaultSigmaFloor = 1e-6;

/// Moments of the utility difference for a candidate pair.
struct PairStats {
  double delta;       // E[f_i - f_j]
  double sigma_pair;  // sqrt(Var[f_i - f_j]), floored
  double mu_second;   // E[f_j]
};

/// Builds PairStats from a two-point predictive distribution.
inline PairStats pair_stats(const PredictiveDistribution& pred, double sigma_floor = kDefaultSigmaFloor) {
  if (pred.means.size() != 2 || pred.covariance.rows() != 2 || pred.covariance.cols() != 2)
    throw std::invalid_argument("pair_stats: predictive distribution must cover exactly two points");
  const double var = pred.covariance(0, 0) + pred.covariance(1, 1) - 2.0 * pred.covariance(0, 1);
  if (!std::isfinite(var)) throw numerical_error("pair_stats: non-finite difference variance");
  // Round-off can push a degenerate pair slightly negative; anything beyond that is an error.
  const double scale = std::max({std::abs(pred.covariance(0, 0)), std::abs(pred.covariance(1, 1)), 1.0});
  if (var < -1e-8 * scale) throw numerical_error("pair_stats: negative difference variance");
  return {pred.means(0) - pred.means(1), std::max(sigma_floor, std::sqrt(std::max(var, 0.0))), pred.means(1)};
}

/// Expected utility of the best option, E[max(f_i, f_j)], in closed form.
inline double eubo(const PairStats& ps) {
  const double u = ps.delta / ps.sigma_pair;
  return ps.delta * normal_cdf(u) + ps.sigma_pair * normal_pdf(u) + ps.mu_second;
}

/// P(c >= lambda) for c ~ N(mu, sd^2); sd == 0 is the deterministic indicator.
inline double feasibility_factor(double mu, double sd, double lambda) {
  if (sd <= 0.0) return mu >= lambda ? 1.0 : 0.0;
  return 1.0 - normal_cdf((lambda - mu) / sd);
}

/// Probability that both candidates are feasible, treating their constraint
/// values as uncorrelated.
inline double feasibility_prob(double mu_i, double sd_i, double mu_j, double sd_j, double lambda) {
  if (sd_i < 0.0 || sd_j < 0.0) throw std::invalid_argument("feasibility_prob: negative standard deviation");
  return feasibility_factor(mu_i, sd_i, lambda) * feasibility_factor(mu_j, sd_j, lambda);
}

inline double euboc(const PairStats& ps, double feas) {
  if (!(feas >= 0.0 && feas <= 1.0)) throw std::invalid_argument("euboc: feasibility must lie in [0,1]");
  return feas * eubo(ps);
}

}  // namespace cpbo::acq

#endif
