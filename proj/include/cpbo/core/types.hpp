#ifndef CPBO_CORE_TYPES_HPP
#define CPBO_CORE_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo {

/// A point of the normalized search space [0,1]^N.
using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when a factorization fails even after jitter escalation, or when an
/// acquisition surface is non-finite everywhere.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown by operations that require a particular lifecycle state.
class state_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Stacks points as rows.
inline Matrix stack_rows(const std::vector<ParamVector>& points, Eigen::Index dims) {
  Matrix out(static_cast<Eigen::Index>(points.size()), dims);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != dims) throw std::invalid_argument("stack_rows: dimension mismatch");
    out.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  }
  return out;
}

/// Posterior mean and covariance of a surrogate at a set of query points.
struct PredictiveDistribution {
  Vector means;
  Matrix covariance;
  Vector variances;  // diagonal of covariance, clamped at zero
};

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cpbo

#endif
