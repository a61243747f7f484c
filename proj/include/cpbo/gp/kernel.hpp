#ifndef CPBO_GP_KERNEL_HPP
#define CPBO_GP_KERNEL_HPP

#include "cpbo/core/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo::gp {

enum class KernelKind { squared_exponential, matern52 };

inline std::string to_string(KernelKind kind) {
  return kind == KernelKind::squared_exponential ? "squared-exponential" : "matern-5/2";
}

/// Stationary ARD kernel with an output scale. k(x, x) == output_scale.
struct KernelSpec {
  KernelKind kind = KernelKind::squared_exponential;
  Vector lengthscales;
  double output_scale = 1.0;

  static KernelSpec isotropic(KernelKind kind, Eigen::Index dims, double lengthscale,
                              double output_scale) {
    return {kind, Vector::Constant(dims, lengthscale), output_scale};
  }

  Eigen::Index dims() const { return lengthscales.size(); }

  void validate() const {
    if (lengthscales.size() == 0) throw std::invalid_argument("kernel: no lengthscales");
    if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite())
      throw std::invalid_argument("kernel: lengthscales must be positive");
    if (!(output_scale > 0.0) || !std::isfinite(output_scale))
      throw std::invalid_argument("kernel: output_scale must be positive");
  }

  /// Hyperparameters in log space: lengthscales first, then output scale.
  Vector log_params() const {
    Vector theta(dims() + 1);
    theta.head(dims()) = lengthscales.array().log();
    theta(dims()) = std::log(output_scale);
    return theta;
  }

  static KernelSpec from_log_params(KernelKind kind, const Vector& theta) {
    const Eigen::Index d = theta.size() - 1;
    return {kind, theta.head(d).array().exp(), std::exp(theta(d))};
  }
};

namespace detail {

constexpr double kSqrt5 = 2.23606797749978969641;

// Scaled squared distance sum_d ((a_d - b_d) / l_d)^2.
template <typename A, typename B>
double scaled_sqdist(const KernelSpec& spec, const A& a, const B& b) {
  // Linear indexing so that row and column vectors can be mixed.
  double r2 = 0.0;
  for (Eigen::Index d = 0; d < spec.lengthscales.size(); ++d) {
    const double u = (a(d) - b(d)) / spec.lengthscales(d);
    r2 += u * u;
  }
  return r2;
}

// k as a function of the scaled squared distance.
inline double profile(KernelKind kind, double scale, double r2) {
  if (kind == KernelKind::squared_exponential) return scale * std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  return scale * (1.0 + kSqrt5 * r + 5.0 / 3.0 * r2) * std::exp(-kSqrt5 * r);
}

// -dk/d(r2) * 2, i.e. the factor w such that dk/da_d = -w (a_d - b_d) / l_d^2.
inline double slope(KernelKind kind, double scale, double r2) {
  if (kind == KernelKind::squared_exponential) return scale * std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  return scale * 5.0 / 3.0 * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
}

}  // namespace detail

/// Kernel value k(a, b).
template <typename A, typename B>
double kernel_eval(const KernelSpec& spec, const A& a, const B& b) {
  if (a.size() != spec.dims() || b.size() != spec.dims())
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  return detail::profile(spec.kind, spec.output_scale, detail::scaled_sqdist(spec, a, b));
}

/// Cross-covariance between the rows of `a` and the rows of `b`.
inline Matrix cross_kernel(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  if (a.cols() != spec.dims() || b.cols() != spec.dims())
    throw std::invalid_argument("cross_kernel: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out(i, j) = detail::profile(spec.kind, spec.output_scale,
                                  detail::scaled_sqdist(spec, a.row(i), b.row(j)));
  return out;
}

inline Matrix gram(const KernelSpec& spec, const Matrix& x) {
  Matrix k(x.rows(), x.rows());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    k(j, j) = spec.output_scale;
    for (Eigen::Index i = j + 1; i < x.rows(); ++i) {
      k(i, j) = detail::profile(spec.kind, spec.output_scale,
                                detail::scaled_sqdist(spec, x.row(i), x.row(j)));
      k(j, i) = k(i, j);
    }
  }
  return k;
}

/// Derivatives of the Gram matrix with respect to the log hyperparameters
/// (log lengthscales, then log output scale).
inline std::vector<Matrix> gram_log_param_gradients(const KernelSpec& spec, const Matrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = spec.dims();
  std::vector<Matrix> grads(static_cast<std::size_t>(d + 1), Matrix::Zero(n, n));
  for (Eigen::Index j = 0; j < n; ++j) {
    grads[static_cast<std::size_t>(d)](j, j) = spec.output_scale;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double r2 = detail::scaled_sqdist(spec, x.row(i), x.row(j));
      const double w = detail::slope(spec.kind, spec.output_scale, r2);
      for (Eigen::Index p = 0; p < d; ++p) {
        const double u = (x(i, p) - x(j, p)) / spec.lengthscales(p);
        const double g = w * u * u;
        grads[static_cast<std::size_t>(p)](i, j) = g;
        grads[static_cast<std::size_t>(p)](j, i) = g;
      }
      const double k = detail::profile(spec.kind, spec.output_scale, r2);
      grads[static_cast<std::size_t>(d)](i, j) = k;
      grads[static_cast<std::size_t>(d)](j, i) = k;
    }
  }
  return grads;
}

/// Row vector k(q, x_i) over training rows, and its Jacobian with respect to q
/// (n x dims).
inline void kernel_row_with_gradient(const KernelSpec& spec, const Matrix& x, const Vector& q,
                                     Vector& k, Matrix& dk_dq) {
  const Eigen::Index n = x.rows();
  k.resize(n);
  dk_dq.resize(n, spec.dims());
  const Eigen::ArrayXd inv_l2 = spec.lengthscales.array().square().inverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r2 = detail::scaled_sqdist(spec, q.transpose(), x.row(i));
    k(i) = detail::profile(spec.kind, spec.output_scale, r2);
    const double w = detail::slope(spec.kind, spec.output_scale, r2);
    for (Eigen::Index d = 0; d < spec.dims(); ++d) dk_dq(i, d) = -w * (q(d) - x(i, d)) * inv_l2(d);
  }
}

/// Gradient of k(a, b) with respect to a.
inline Vector kernel_gradient_first(const KernelSpec& spec, const Vector& a, const Vector& b) {
  const double r2 = detail::scaled_sqdist(spec, a, b);
  const double w = detail::slope(spec.kind, spec.output_scale, r2);
  return (-w * (a - b).array() / spec.lengthscales.array().square()).matrix();
}

}  // namespace cpbo::gp

#endif
