#ifndef CPBO_GP_PRIORS_HPP
#define CPBO_GP_PRIORS_HPP

#include "cpbo/core/types.hpp"

#include <cmath>
#include <random>

namespace cpbo::gp {

/// Gamma(shape, rate) density placed on a positive hyperparameter value.
struct GammaPrior {
  double shape;
  double rate;

  double log_density(double v) const {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(v) - rate * v;
  }
  /// d/d(log v) of log_density(v).
  double dlog_density_dlog(double v) const { return (shape - 1.0) - rate * v; }

  double mode() const { return shape > 1.0 ? (shape - 1.0) / rate : shape / rate; }

  template <typename Rng>
  double sample(Rng& rng) const {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    return dist(rng);
  }
};

struct KernelPriors {
  GammaPrior lengthscale{3.0, 6.0};
  GammaPrior output_scale{2.0, 0.15};
};

/// Log prior density of log-space kernel hyperparameters (value density, no
/// change-of-variables term) with its gradient.
inline double log_prior(const KernelPriors& priors, const Vector& theta, Vector* grad) {
  const Eigen::Index d = theta.size() - 1;
  double lp = 0.0;
  if (grad) grad->resize(theta.size());
  for (Eigen::Index i = 0; i <= d; ++i) {
    const GammaPrior& p = i < d ? priors.lengthscale : priors.output_scale;
    const double v = std::exp(theta(i));
    lp += p.log_density(v);
    if (grad) (*grad)(i) = p.dlog_density_dlog(v);
  }
  return lp;
}

}  // namespace cpbo::gp

#endif
