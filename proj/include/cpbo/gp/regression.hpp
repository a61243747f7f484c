#ifndef CPBO_GP_REGRESSION_HPP
#define CPBO_GP_REGRESSION_HPP

#include "cpbo/core/types.hpp"
#include "cpbo/gp/kernel.hpp"
#include "cpbo/gp/priors.hpp"
#include "cpbo/opt/box_lbfgs.hpp"

#include <cmath>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace cpbo::gp {

inline constexpr double kUnitBoxTolerance = 1e-9;

/// Throws unless every coordinate lies in [0,1] (within 1e-9).
inline void require_unit_box(const Matrix& x, const char* who) {
  if (x.size() == 0) return;
  if (!x.allFinite() || x.minCoeff() < -kUnitBoxTolerance || x.maxCoeff() > 1.0 + kUnitBoxTolerance)
    throw std::invalid_argument(std::string(who) + ": inputs must lie in [0,1]^N");
}

/// Cholesky of k + jitter*I, escalating jitter x10 up to max_jitter.
/// Returns the jitter that succeeded, or nullopt.
inline std::optional<double> factorize_with_jitter(const Matrix& k, double jitter, double max_jitter,
                                                   Eigen::LLT<Matrix>& llt) {
  const Eigen::Index n = k.rows();
  for (double j = jitter; j <= max_jitter * (1.0 + 1e-12); j *= 10.0) {
    llt.compute(k + j * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) return j;
    if (j == 0.0) j = 1e-12;  // keep escalating from a zero start
  }
  return std::nullopt;
}

struct GPFitOptions {
  KernelKind kind = KernelKind::matern52;
  KernelPriors priors{};
  double jitter = 1e-6;
  double max_jitter = 1e-2;
  int restarts = 3;
  std::uint64_t seed = 0;
  /// Hyperparameters are fitted on an evenly strided subset of at most this
  /// many points; the posterior always conditions on every point.
  int max_fit_points = 256;
  int max_iterations = 60;
  /// First restart starts here when set (previous fit); otherwise at the prior modes.
  std::optional<KernelSpec> initial;
  double min_lengthscale = 5e-3;
  double max_lengthscale = 50.0;
  double min_output_scale = 1e-3;
  double max_output_scale = 1e3;
};

/// Exact GP regression with a constant prior mean. Targets are standardized
/// internally; kernel and mean_constant live in the standardized space.
class GPModel {
 public:
  GPModel() = default;

  /// Conditions a GP with fixed hyperparameters on the data.
  static GPModel condition(const Matrix& inputs, const Vector& targets, const KernelSpec& kernel,
                           double mean_constant, double jitter, double max_jitter = 1e-2) {
    kernel.validate();
    if (inputs.rows() != targets.size())
      throw std::invalid_argument("GPModel: number of targets must equal number of inputs");
    if (inputs.rows() > 0 && inputs.cols() != kernel.dims())
      throw std::invalid_argument("GPModel: input dimension does not match kernel");
    if (!targets.allFinite()) throw std::invalid_argument("GPModel: targets must be finite");
    require_unit_box(inputs, "GPModel");

    GPModel m;
    m.inputs_ = inputs;
    m.targets_ = targets;
    m.kernel_ = kernel;
    m.mean_constant_ = mean_constant;
    std::tie(m.y_shift_, m.y_scale_) = standardization(targets);
    m.jitter_ = jitter;
    if (inputs.rows() > 0) {
      auto used = factorize_with_jitter(gram(kernel, inputs), jitter, max_jitter, m.llt_);
      if (!used) throw numerical_error("GPModel: factorization failed after jitter escalation");
      m.jitter_ = *used;
      m.alpha_ = m.llt_.solve(m.standardized_residual());
    }
    return m;
  }

  /// Conditions with a fixed kernel and the generalized-least-squares
  /// constant mean for this data (the mean that maximizes the likelihood).
  static GPModel condition_profiled(const Matrix& inputs, const Vector& targets, const KernelSpec& kernel,
                                    double jitter, double max_jitter = 1e-2) {
    GPModel m = condition(inputs, targets, kernel, 0.0, jitter, max_jitter);
    if (m.size() == 0) return m;
    const Vector ones = Vector::Ones(m.size());
    const Vector kinv_one = m.llt_.solve(ones);
    m.mean_constant_ = kinv_one.dot(m.standardized_residual()) / ones.dot(kinv_one);
    m.alpha_ = m.llt_.solve(m.standardized_residual());
    return m;
  }

  /// Prior-only model (no training data).
  static GPModel prior(const KernelSpec& kernel, double mean_constant = 0.0, double jitter = 1e-6) {
    return condition(Matrix(0, kernel.dims()), Vector(0), kernel, mean_constant, jitter);
  }

  Eigen::Index size() const { return inputs_.rows(); }
  Eigen::Index dims() const { return kernel_.dims(); }
  const Matrix& inputs() const { return inputs_; }
  const Vector& targets() const { return targets_; }
  const KernelSpec& kernel() const { return kernel_; }
  double jitter() const { return jitter_; }
  /// Constant prior mean in target units.
  double mean_constant() const { return y_shift_ + y_scale_ * mean_constant_; }
  double standardized_mean_constant() const { return mean_constant_; }
  double target_scale() const { return y_scale_; }
  const Eigen::LLT<Matrix>& cholesky() const { return llt_; }

  /// Posterior marginal mean and variance at q. Gradients are written when
  /// the output pointers are non-null.
  void predict_marginal(const Vector& q, double& mean, double& var, Vector* dmean = nullptr,
                        Vector* dvar = nullptr) const {
    if (q.size() != dims()) throw std::invalid_argument("GPModel: query dimension mismatch");
    const double s2 = y_scale_ * y_scale_;
    if (size() == 0) {
      mean = mean_constant();
      var = s2 * kernel_.output_scale;
      if (dmean) *dmean = Vector::Zero(dims());
      if (dvar) *dvar = Vector::Zero(dims());
      return;
    }
    Vector k;
    Matrix dk;
    if (dmean || dvar) {
      kernel_row_with_gradient(kernel_, inputs_, q, k, dk);
    } else {
      k = cross_kernel(kernel_, inputs_, q.transpose());
    }
    mean = y_shift_ + y_scale_ * (mean_constant_ + k.dot(alpha_));
    const Vector v = llt_.matrixL().solve(k);
    const double raw_var = kernel_.output_scale - v.squaredNorm();
    var = s2 * std::max(raw_var, 0.0);
    if (dmean) *dmean = y_scale_ * (dk.transpose() * alpha_);
    if (dvar) {
      if (raw_var <= 0.0) {
        *dvar = Vector::Zero(dims());
      } else {
        const Vector kinv_k = llt_.matrixU().solve(v);
        *dvar = -2.0 * s2 * (dk.transpose() * kinv_k);
      }
    }
  }

  /// Marginal means and variances for the rows of `queries`.
  void predict_marginals(const Matrix& queries, Vector& means, Vector& vars) const {
    if (queries.cols() != dims()) throw std::invalid_argument("GPModel: query dimension mismatch");
    const double s2 = y_scale_ * y_scale_;
    if (size() == 0) {
      means = Vector::Constant(queries.rows(), mean_constant());
      vars = Vector::Constant(queries.rows(), s2 * kernel_.output_scale);
      return;
    }
    const Matrix ks = cross_kernel(kernel_, inputs_, queries);
    means = (y_shift_ + y_scale_ * mean_constant_) + y_scale_ * (ks.transpose() * alpha_).array();
    const Matrix v = llt_.matrixL().solve(ks);
    vars = (s2 * (kernel_.output_scale - v.colwise().squaredNorm().array()).max(0.0)).matrix();
  }

 private:
  static std::pair<double, double> standardization(const Vector& y) {
    if (y.size() == 0) return {0.0, 1.0};
    const double mu = y.mean();
    const double sd = y.size() > 1 ? std::sqrt((y.array() - mu).square().sum() / (y.size() - 1)) : 0.0;
    return {mu, sd > 1e-12 ? sd : 1.0};
  }

  Vector standardized_residual() const {
    return ((targets_.array() - y_shift_) / y_scale_ - mean_constant_).matrix();
  }

  Matrix inputs_;
  Vector targets_;
  KernelSpec kernel_;
  double mean_constant_ = 0.0;
  double y_shift_ = 0.0;
  double y_scale_ = 1.0;
  double jitter_ = 1e-6;
  Eigen::LLT<Matrix> llt_;
  Vector alpha_;
};

/// Full predictive distribution (mean vector and covariance) at `queries`.
inline PredictiveDistribution gp_posterior(const GPModel& model, const std::vector<ParamVector>& queries) {
  const Matrix q = stack_rows(queries, model.dims());
  PredictiveDistribution out;
  const double s2 = model.target_scale() * model.target_scale();
  Matrix prior_cov = gram(model.kernel(), q);
  if (model.size() == 0) {
    out.means = Vector::Constant(q.rows(), model.mean_constant());
    out.covariance = s2 * prior_cov;
  } else {
    Vector means;
    Vector vars;
    model.predict_marginals(q, means, vars);
    out.means = means;
    const Matrix ks = cross_kernel(model.kernel(), model.inputs(), q);
    const Matrix v = model.cholesky().matrixL().solve(ks);
    out.covariance = s2 * (prior_cov - v.transpose() * v);
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  out.variances = out.covariance.diagonal().cwiseMax(0.0);
  out.covariance.diagonal() = out.variances;
  return out;
}

namespace detail {

/// Negative (log marginal likelihood + log prior) with the constant mean
/// profiled out, and its gradient in log-hyperparameter space.
struct MarginalLikelihood {
  const Matrix& x;
  const Vector& y;  // standardized
  KernelKind kind;
  const KernelPriors& priors;
  double jitter;

  double operator()(const Vector& theta, Vector& grad, double* mean_out = nullptr) const {
    const KernelSpec spec = KernelSpec::from_log_params(kind, theta);
    const Eigen::Index n = x.rows();
    Eigen::LLT<Matrix> llt(gram(spec, x) + jitter * Matrix::Identity(n, n));
    if (llt.info() != Eigen::Success) {
      grad = Vector::Zero(theta.size());
      return std::numeric_limits<double>::infinity();
    }
    const Vector ones = Vector::Ones(n);
    const Vector kinv_one = llt.solve(ones);
    const Vector kinv_y = llt.solve(y);
    const double m = ones.dot(kinv_y) / ones.dot(kinv_one);
    const Vector alpha = kinv_y - m * kinv_one;
    const Vector r = y - m * ones;
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
    const double lml = -0.5 * r.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);

    Vector prior_grad;
    const double lp = log_prior(priors, theta, &prior_grad);

    const Matrix kinv = llt.solve(Matrix::Identity(n, n));
    const Matrix inner = alpha * alpha.transpose() - kinv;
    const auto dks = gram_log_param_gradients(spec, x);
    grad.resize(theta.size());
    for (std::size_t j = 0; j < dks.size(); ++j)
      grad(static_cast<Eigen::Index>(j)) = 0.5 * inner.cwiseProduct(dks[j]).sum();
    grad = -(grad + prior_grad);
    if (mean_out) *mean_out = m;
    return -(lml + lp);
  }
};

}  // namespace detail

/// Fits kernel hyperparameters and the constant mean by maximizing the log
/// marginal likelihood plus log gamma-prior densities (multi-start, log space).
inline GPModel fit_gp(const Matrix& inputs, const Vector& targets, const GPFitOptions& opts) {
  if (inputs.rows() != targets.size())
    throw std::invalid_argument("fit_gp: number of targets must equal number of inputs");
  if (!targets.allFinite()) throw std::invalid_argument("fit_gp: targets must be finite");
  if (inputs.rows() == 0) throw std::invalid_argument("fit_gp: at least one training point required");
  require_unit_box(inputs, "fit_gp");
  const Eigen::Index dims = inputs.cols();
  const Eigen::Index n = inputs.rows();

  // Standardize exactly as GPModel does.
  const double mu = targets.mean();
  double sd = n > 1 ? std::sqrt((targets.array() - mu).square().sum() / (n - 1)) : 0.0;
  if (!(sd > 1e-12)) sd = 1.0;
  const Vector ystd = ((targets.array() - mu) / sd).matrix();

  Matrix fit_x = inputs;
  Vector fit_y = ystd;
  if (opts.max_fit_points > 0 && n > opts.max_fit_points) {
    const Eigen::Index m = opts.max_fit_points;
    fit_x.resize(m, dims);
    fit_y.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index src = (i * n) / m;
      fit_x.row(i) = inputs.row(src);
      fit_y(i) = ystd(src);
    }
  }

  Vector lo(dims + 1), hi(dims + 1);
  lo.head(dims).setConstant(std::log(opts.min_lengthscale));
  hi.head(dims).setConstant(std::log(opts.max_lengthscale));
  lo(dims) = std::log(opts.min_output_scale);
  hi(dims) = std::log(opts.max_output_scale);

  // Fitting jitter grows with the factorization failure mode of the data.
  double fit_jitter = opts.jitter;
  {
    const KernelSpec probe = KernelSpec::isotropic(opts.kind, dims, opts.priors.lengthscale.mode(),
                                                   opts.priors.output_scale.mode());
    Eigen::LLT<Matrix> llt;
    auto used = factorize_with_jitter(gram(probe, fit_x), opts.jitter, opts.max_jitter, llt);
    if (!used) throw numerical_error("fit_gp: factorization failed after jitter escalation");
    fit_jitter = *used;
  }

  detail::MarginalLikelihood objective{fit_x, fit_y, opts.kind, opts.priors, fit_jitter};
  std::mt19937_64 rng(opts.seed);

  Vector best_theta;
  double best_value = std::numeric_limits<double>::infinity();
  const int restarts = std::max(1, opts.restarts);
  for (int r = 0; r < restarts; ++r) {
    Vector theta0(dims + 1);
    if (r == 0) {
      if (opts.initial && opts.initial->dims() == dims) {
        theta0 = opts.initial->log_params();
      } else {
        theta0.head(dims).setConstant(std::log(opts.priors.lengthscale.mode()));
        theta0(dims) = std::log(opts.priors.output_scale.mode());
      }
    } else {
      for (Eigen::Index i = 0; i < dims; ++i) theta0(i) = std::log(opts.priors.lengthscale.sample(rng));
      theta0(dims) = std::log(opts.priors.output_scale.sample(rng));
    }
    theta0 = theta0.cwiseMax(lo).cwiseMin(hi);
    opt::BoxLbfgsOptions lopts;
    lopts.max_iterations = opts.max_iterations;
    lopts.projected_gradient_tol = 1e-5;
    lopts.relative_decrease_tol = 1e-9;
    auto res = opt::minimize_box([&](const Vector& t, Vector& g) { return objective(t, g); }, theta0,
                                 lo, hi, lopts);
    if (std::isfinite(res.value) && res.value < best_value) {
      best_value = res.value;
      best_theta = res.x;
    }
  }
  if (best_theta.size() == 0) throw numerical_error("fit_gp: no restart produced a finite likelihood");

  Vector unused;
  double mean_std = 0.0;
  objective(best_theta, unused, &mean_std);
  const KernelSpec spec = KernelSpec::from_log_params(opts.kind, best_theta);
  return GPModel::condition(inputs, targets, spec, mean_std, opts.jitter, opts.max_jitter);
}

inline GPModel fit_gp(const std::vector<ParamVector>& inputs, const std::vector<double>& targets,
                      const GPFitOptions& opts) {
  if (inputs.empty()) throw std::invalid_argument("fit_gp: at least one training point required");
  return fit_gp(stack_rows(inputs, inputs.front().size()),
                Eigen::Map<const Vector>(targets.data(), static_cast<Eigen::Index>(targets.size())), opts);
}

}  // namespace cpbo::gp

#endif
