#ifndef CPBO_PREF_PREFERENCE_GP_HPP
#define CPBO_PREF_PREFERENCE_GP_HPP

#include "cpbo/core/normal.hpp"
#include "cpbo/core/types.hpp"
#include "cpbo/gp/kernel.hpp"
#include "cpbo/gp/priors.hpp"
#include "cpbo/opt/box_lbfgs.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace cpbo::pref {

inline constexpr double kDuplicateTolerance = 1e-9;
inline constexpr double kLogLikelihoodFloor = -690.7755278982137;  // log 1e-300

/// Observation "points[winner] is preferred over points[loser]".
struct Comparison {
  std::size_t winner;
  std::size_t loser;
};

/// Unique points plus pairwise outcomes over them.
class PreferenceDataset {
 public:
  explicit PreferenceDataset(Eigen::Index dims, double sigma_cmp = 1.0) : dims_(dims), sigma_(sigma_cmp) {
    if (dims <= 0) throw std::invalid_argument("PreferenceDataset: dims must be positive");
    if (!(sigma_cmp > 0.0)) throw std::invalid_argument("PreferenceDataset: sigma_cmp must be positive");
  }

  /// Index of x, appending it unless an existing point matches within 1e-9.
  std::size_t add_point(const ParamVector& x) {
    if (x.size() != dims_) throw std::invalid_argument("PreferenceDataset: dimension mismatch");
    if (auto idx = find(x)) return *idx;
    points_.push_back(x);
    return points_.size() - 1;
  }

  std::optional<std::size_t> find(const ParamVector& x) const {
    for (std::size_t i = 0; i < points_.size(); ++i)
      if ((points_[i] - x).lpNorm<Eigen::Infinity>() <= kDuplicateTolerance) return i;
    return std::nullopt;
  }

  void add_comparison(std::size_t winner, std::size_t loser) {
    if (winner == loser) throw std::invalid_argument("PreferenceDataset: winner and loser coincide");
    if (winner >= points_.size() || loser >= points_.size())
      throw std::invalid_argument("PreferenceDataset: comparison references unknown point");
    comparisons_.push_back({winner, loser});
  }

  Eigen::Index dims() const { return dims_; }
  double sigma() const { return sigma_; }
  const std::vector<ParamVector>& points() const { return points_; }
  const std::vector<Comparison>& comparisons() const { return comparisons_; }
  std::size_t size() const { return points_.size(); }
  Matrix points_matrix() const { return stack_rows(points_, dims_); }

 private:
  Eigen::Index dims_;
  double sigma_;
  std::vector<ParamVector> points_;
  std::vector<Comparison> comparisons_;
};

/// Probability that a point with latent f_i wins over one with latent f_j.
inline double choice_probability(double f_i, double f_j, double sigma) {
  return normal_cdf((f_i - f_j) / (std::numbers::sqrt2 * sigma));
}

/// Thurstone-Mosteller log likelihood of every comparison in the dataset.
inline double tm_log_likelihood(const PreferenceDataset& ds, const Vector& latents) {
  if (latents.size() != static_cast<Eigen::Index>(ds.size()))
    throw std::invalid_argument("tm_log_likelihood: latent count does not match point count");
  const double scale = 1.0 / (std::numbers::sqrt2 * ds.sigma());
  double ll = 0.0;
  for (const auto& c : ds.comparisons()) {
    const double z = (latents(static_cast<Eigen::Index>(c.winner)) -
                      latents(static_cast<Eigen::Index>(c.loser))) * scale;
    ll += std::max(log_normal_cdf(z), kLogLikelihoodFloor);
  }
  return ll;
}

struct LaplaceOptions {
  double tol = 1e-6;
  int max_iter = 100;
  int max_halvings = 20;
};

/// Gaussian approximation to the latent posterior at its mode.
struct LatentPosterior {
  Vector map_latents;
  Vector kinv_latents;          // K^{-1} f at the mode (equal to the likelihood gradient)
  Matrix neg_loglik_hessian;    // W
  Matrix kernel_matrix;         // K
  Matrix predictive_correction; // W (I + K W)^{-1}, i.e. (K + W^{-1})^{-1}
  double log_posterior = 0.0;   // log lik - f'K^{-1}f / 2 at the mode
  double log_evidence = 0.0;    // Laplace approximation to log p(D | kernel)
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // log posterior after each accepted step
};

namespace detail {

struct LikelihoodTerms {
  double loglik;
  Vector grad;  // d loglik / df
  Matrix w;     // -d^2 loglik / df^2
};

inline LikelihoodTerms likelihood_terms(const PreferenceDataset& ds, const Vector& f) {
  const Eigen::Index n = f.size();
  const double scale = 1.0 / (std::numbers::sqrt2 * ds.sigma());
  LikelihoodTerms t{0.0, Vector::Zero(n), Matrix::Zero(n, n)};
  for (const auto& c : ds.comparisons()) {
    const auto w = static_cast<Eigen::Index>(c.winner);
    const auto l = static_cast<Eigen::Index>(c.loser);
    const double z = (f(w) - f(l)) * scale;
    t.loglik += std::max(log_normal_cdf(z), kLogLikelihoodFloor);
    const auto d = log_normal_cdf_derivatives(z);
    t.grad(w) += d.d1 * scale;
    t.grad(l) -= d.d1 * scale;
    const double h = -d.d2 * scale * scale;
    t.w(w, w) += h;
    t.w(l, l) += h;
    t.w(w, l) -= h;
    t.w(l, w) -= h;
  }
  return t;
}

}  // namespace detail

/// Newton ascent on log p(D|f) - f'K^{-1}f/2 starting from f = K a0 (a0 = 0 by default).
///
/// The iterate is tracked as a = K^{-1} f so K is never inverted: the full
/// Newton step solves (I + W K) z = W f + g and moves to f = K z. Steps are
/// halved while the log posterior decreases.
inline LatentPosterior laplace_fit(const PreferenceDataset& ds, const gp::KernelSpec& kernel,
                                   const LaplaceOptions& opts = {},
                                   const std::optional<Vector>& warm_start = std::nullopt) {
  kernel.validate();
  if (ds.size() == 0) throw std::invalid_argument("laplace_fit: at least one point required");
  if (kernel.dims() != ds.dims()) throw std::invalid_argument("laplace_fit: kernel dimension mismatch");

  const Eigen::Index n = static_cast<Eigen::Index>(ds.size());
  const Matrix x = ds.points_matrix();
  LatentPosterior lp;
  lp.kernel_matrix = gp::gram(kernel, x);
  const Matrix& K = lp.kernel_matrix;
  const Matrix eye = Matrix::Identity(n, n);

  Vector a = Vector::Zero(n);
  if (warm_start && warm_start->size() == n && !ds.comparisons().empty()) a = *warm_start;
  Vector f = K * a;

  auto log_post = [&](const Vector& ff, const Vector& aa) { return tm_log_likelihood(ds, ff) - 0.5 * ff.dot(aa); };

  if (ds.comparisons().empty()) {
    lp.map_latents = Vector::Zero(n);
    lp.kinv_latents = Vector::Zero(n);
    lp.neg_loglik_hessian = Matrix::Zero(n, n);
    lp.predictive_correction = Matrix::Zero(n, n);
    lp.log_posterior = 0.0;
    lp.log_evidence = 0.0;
    lp.converged = true;
    return lp;
  }

  double psi = log_post(f, a);
  if (warm_start && !std::isfinite(psi)) {
    a.setZero();
    f.setZero();
    psi = log_post(f, a);
  }
  lp.objective_trace.push_back(psi);
  auto terms = detail::likelihood_terms(ds, f);
  for (lp.iterations = 0; lp.iterations < opts.max_iter; ++lp.iterations) {
    lp.grad_norm = (terms.grad - a).norm();
    if (lp.grad_norm <= opts.tol) break;
    const Vector b = terms.w * f + terms.grad;
    Eigen::PartialPivLU<Matrix> lu(eye + terms.w * K);
    const Vector a_full = lu.solve(b);
    const Vector da = a_full - a;
    double step = 1.0;
    bool accepted = false;
    Vector a_new, f_new;
    double psi_new = psi;
    for (int h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
      a_new = a + step * da;
      f_new = K * a_new;
      psi_new = log_post(f_new, a_new);
      if (std::isfinite(psi_new) && psi_new >= psi - 1e-12 * std::abs(psi)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    a = std::move(a_new);
    f = std::move(f_new);
    psi = psi_new;
    lp.objective_trace.push_back(psi);
    terms = detail::likelihood_terms(ds, f);
  }
  lp.grad_norm = (terms.grad - a).norm();
  lp.converged = lp.grad_norm <= opts.tol;

  Eigen::PartialPivLU<Matrix> lu_kw(eye + K * terms.w);
  Eigen::PartialPivLU<Matrix> lu_wk(eye + terms.w * K);
  if (!lu_kw.matrixLU().diagonal().allFinite())
    throw numerical_error("laplace_fit: singular Newton system");
  Matrix m = lu_wk.solve(terms.w).transpose();
  lp.predictive_correction = 0.5 * (m + m.transpose());
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += std::log(std::abs(lu_kw.matrixLU()(i, i)));

  lp.map_latents = f;
  lp.kinv_latents = a;
  lp.neg_loglik_hessian = std::move(terms.w);
  lp.log_posterior = psi;
  lp.log_evidence = psi - 0.5 * log_det;
  return lp;
}

/// Gradient of the Laplace log evidence with respect to the log kernel
/// hyperparameters, including the shift of the mode with the kernel.
inline Vector laplace_evidence_gradient(const PreferenceDataset& ds, const gp::KernelSpec& kernel,
                                        const LatentPosterior& lp) {
  const Eigen::Index n = static_cast<Eigen::Index>(ds.size());
  const Matrix x = ds.points_matrix();
  const Matrix& K = lp.kernel_matrix;
  const Matrix& W = lp.neg_loglik_hessian;
  const Matrix eye = Matrix::Identity(n, n);
  const auto dks = gp::gram_log_param_gradients(kernel, x);
  Vector grad(static_cast<Eigen::Index>(dks.size()));
  if (ds.comparisons().empty()) {
    grad.setZero();
    return grad;
  }

  Eigen::PartialPivLU<Matrix> lu_kw(eye + K * W);
  Eigen::PartialPivLU<Matrix> lu_wk(eye + W * K);
  const Matrix sigma_post = lu_kw.solve(K);  // (K^{-1} + W)^{-1}

  const double scale = 1.0 / (std::numbers::sqrt2 * ds.sigma());
  Vector g = Vector::Zero(n);
  Vector s2 = Vector::Zero(n);
  for (const auto& c : ds.comparisons()) {
    const auto w = static_cast<Eigen::Index>(c.winner);
    const auto l = static_cast<Eigen::Index>(c.loser);
    const double z = (lp.map_latents(w) - lp.map_latents(l)) * scale;
    const auto d = log_normal_cdf_derivatives(z);
    g(w) += d.d1 * scale;
    g(l) -= d.d1 * scale;
    const double s = (sigma_post(w, w) + sigma_post(l, l) - 2.0 * sigma_post(w, l)) * scale * scale;
    s2(w) += 0.5 * d.d3 * s * scale;
    s2(l) -= 0.5 * d.d3 * s * scale;
  }
  const Vector u = lu_wk.solve(s2);  // (I + K W)^{-T} s2
  const Vector& a = lp.kinv_latents;
  for (std::size_t j = 0; j < dks.size(); ++j) {
    const Matrix& dk = dks[j];
    const double explicit_fit = 0.5 * a.dot(dk * a);
    const double explicit_det = -0.5 * lp.predictive_correction.cwiseProduct(dk).sum();
    const double implicit = u.dot(dk * g);
    grad(static_cast<Eigen::Index>(j)) = explicit_fit + explicit_det + implicit;
  }
  return grad;
}

/// Laplace predictive distribution of the latent utility at `queries`.
inline PredictiveDistribution pref_posterior(const LatentPosterior& lp, const gp::KernelSpec& kernel,
                                             const Matrix& points, const std::vector<ParamVector>& queries) {
  if (points.rows() != lp.map_latents.size())
    throw std::invalid_argument("pref_posterior: posterior does not match points");
  const Matrix q = stack_rows(queries, kernel.dims());
  if (points.rows() > 0 && points.cols() != kernel.dims())
    throw std::invalid_argument("pref_posterior: dimension mismatch");
  PredictiveDistribution out;
  const Matrix ks = gp::cross_kernel(kernel, points, q);
  out.means = ks.transpose() * lp.kinv_latents;
  out.covariance = gp::gram(kernel, q) - ks.transpose() * lp.predictive_correction * ks;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  out.variances = out.covariance.diagonal().cwiseMax(0.0);
  out.covariance.diagonal() = out.variances;
  return out;
}

struct PreferenceFitOptions {
  gp::KernelPriors priors{};
  int restarts = 3;
  std::uint64_t seed = 0;
  int max_iterations = 60;
  std::optional<gp::KernelSpec> initial;
  LaplaceOptions laplace{};
  double min_lengthscale = 5e-3;
  double max_lengthscale = 50.0;
  double min_output_scale = 1e-3;
  double max_output_scale = 1e3;
};

/// Fitted objective surrogate: points, kernel and Laplace posterior.
class PreferenceModel {
 public:
  PreferenceModel() = default;
  PreferenceModel(Matrix points, gp::KernelSpec kernel, LatentPosterior posterior)
      : points_(std::move(points)), kernel_(std::move(kernel)), posterior_(std::move(posterior)) {}

  /// Prior-only model over no data.
  static PreferenceModel prior(const gp::KernelSpec& kernel) {
    LatentPosterior lp;
    lp.converged = true;
    return {Matrix(0, kernel.dims()), kernel, std::move(lp)};
  }

  const Matrix& points() const { return points_; }
  const gp::KernelSpec& kernel() const { return kernel_; }
  const LatentPosterior& posterior() const { return posterior_; }
  Eigen::Index dims() const { return kernel_.dims(); }
  Eigen::Index size() const { return points_.rows(); }

  PredictiveDistribution predict(const std::vector<ParamVector>& queries) const {
    if (size() == 0) {
      const Matrix q = stack_rows(queries, dims());
      PredictiveDistribution out{Vector::Zero(q.rows()), gp::gram(kernel_, q), {}};
      out.variances = out.covariance.diagonal();
      return out;
    }
    return pref_posterior(posterior_, kernel_, points_, queries);
  }

  double mean(const ParamVector& q) const {
    if (size() == 0) return 0.0;
    return gp::cross_kernel(kernel_, points_, q.transpose()).col(0).dot(posterior_.kinv_latents);
  }

  /// Joint moments of (f(a), f(b)) and their gradients with respect to a and b.
  struct PairMoments {
    double mean_a, mean_b, var_a, var_b, cov_ab;
    Vector dmean_a, dmean_b, dvar_a, dvar_b, dcov_da, dcov_db;
  };

  PairMoments pair_moments(const Vector& a, const Vector& b, bool with_gradient) const {
    PairMoments pm{};
    const double kab = gp::kernel_eval(kernel_, a, b);
    pm.var_a = kernel_.output_scale;
    pm.var_b = kernel_.output_scale;
    pm.cov_ab = kab;
    pm.mean_a = pm.mean_b = 0.0;
    const Eigen::Index d = dims();
    if (with_gradient) {
      const Vector dkab_da = gp::kernel_gradient_first(kernel_, a, b);
      pm.dmean_a = pm.dmean_b = pm.dvar_a = pm.dvar_b = Vector::Zero(d);
      pm.dcov_da = dkab_da;
      pm.dcov_db = -dkab_da;
    }
    if (size() == 0) return pm;

    Vector ka, kb;
    Matrix dka, dkb;
    if (with_gradient) {
      gp::kernel_row_with_gradient(kernel_, points_, a, ka, dka);
      gp::kernel_row_with_gradient(kernel_, points_, b, kb, dkb);
    } else {
      ka = gp::cross_kernel(kernel_, points_, a.transpose()).col(0);
      kb = gp::cross_kernel(kernel_, points_, b.transpose()).col(0);
    }
    const Vector& alpha = posterior_.kinv_latents;
    const Matrix& M = posterior_.predictive_correction;
    const Vector ma = M * ka;
    const Vector mb = M * kb;
    pm.mean_a = ka.dot(alpha);
    pm.mean_b = kb.dot(alpha);
    pm.var_a = kernel_.output_scale - ka.dot(ma);
    pm.var_b = kernel_.output_scale - kb.dot(mb);
    pm.cov_ab = kab - ka.dot(mb);
    if (with_gradient) {
      pm.dmean_a = dka.transpose() * alpha;
      pm.dmean_b = dkb.transpose() * alpha;
      pm.dvar_a = -2.0 * (dka.transpose() * ma);
      pm.dvar_b = -2.0 * (dkb.transpose() * mb);
      pm.dcov_da -= dka.transpose() * mb;
      pm.dcov_db -= dkb.transpose() * ma;
    }
    return pm;
  }

 private:
  Matrix points_;
  gp::KernelSpec kernel_;
  LatentPosterior posterior_;
};

/// Fits the objective kernel by maximizing the Laplace evidence plus log gamma
/// priors (multi-start in log space), then returns the posterior at the best
/// hyperparameters. With no comparisons the prior is returned unchanged.
inline PreferenceModel fit_preference_gp(const PreferenceDataset& ds, const PreferenceFitOptions& opts) {
  const Eigen::Index dims = ds.dims();
  gp::KernelSpec start = opts.initial && opts.initial->dims() == dims
                             ? *opts.initial
                             : gp::KernelSpec::isotropic(gp::KernelKind::squared_exponential, dims,
                                                         opts.priors.lengthscale.mode(),
                                                         opts.priors.output_scale.mode());
  start.kind = gp::KernelKind::squared_exponential;
  if (ds.size() == 0) return PreferenceModel::prior(start);
  if (ds.comparisons().empty()) return {ds.points_matrix(), start, laplace_fit(ds, start, opts.laplace)};

  Vector lo(dims + 1), hi(dims + 1);
  lo.head(dims).setConstant(std::log(opts.min_lengthscale));
  hi.head(dims).setConstant(std::log(opts.max_lengthscale));
  lo(dims) = std::log(opts.min_output_scale);
  hi(dims) = std::log(opts.max_output_scale);

  std::mt19937_64 rng(opts.seed);
  std::optional<Vector> warm;
  auto objective = [&](const Vector& theta, Vector& grad) {
    const gp::KernelSpec spec = gp::KernelSpec::from_log_params(gp::KernelKind::squared_exponential, theta);
    LatentPosterior lp;
    try {
      lp = laplace_fit(ds, spec, opts.laplace, warm);
    } catch (const numerical_error&) {
      grad = Vector::Zero(theta.size());
      return std::numeric_limits<double>::infinity();
    }
    warm = lp.kinv_latents;
    Vector prior_grad;
    const double lpr = gp::log_prior(opts.priors, theta, &prior_grad);
    grad = -(laplace_evidence_gradient(ds, spec, lp) + prior_grad);
    return -(lp.log_evidence + lpr);
  };

  Vector best_theta;
  double best_value = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    Vector theta0(dims + 1);
    if (r == 0) {
      theta0 = start.log_params();
    } else {
      for (Eigen::Index i = 0; i < dims; ++i) theta0(i) = std::log(opts.priors.lengthscale.sample(rng));
      theta0(dims) = std::log(opts.priors.output_scale.sample(rng));
    }
    theta0 = theta0.cwiseMax(lo).cwiseMin(hi);
    warm.reset();
    opt::BoxLbfgsOptions lopts;
    lopts.max_iterations = opts.max_iterations;
    lopts.projected_gradient_tol = 1e-5;
    lopts.relative_decrease_tol = 1e-9;
    auto res = opt::minimize_box(objective, theta0, lo, hi, lopts);
    if (std::isfinite(res.value) && res.value < best_value) {
      best_value = res.value;
      best_theta = res.x;
    }
  }
  if (best_theta.size() == 0) throw numerical_error("fit_preference_gp: no restart produced a finite evidence");
  const gp::KernelSpec spec = gp::KernelSpec::from_log_params(gp::KernelKind::squared_exponential, best_theta);
  return {ds.points_matrix(), spec, laplace_fit(ds, spec, opts.laplace)};
}

}  // namespace cpbo::pref

#endif
