#ifndef CPBO_BENCH_PROBLEMS_HPP
#define CPBO_BENCH_PROBLEMS_HPP

#include "cpbo/core/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo::bench {

/// A constrained test problem on a native box, maximized subject to c(x) >= lambda.
struct ProblemSpec {
  std::string name;
  Eigen::Index dims = 0;
  std::function<double(const Vector&)> objective;   // native coordinates
  std::function<double(const Vector&)> constraint;  // native coordinates
  Vector lo;
  Vector hi;
  double lambda = 0.0;
  double f_opt = 0.0;
  double f_min = 0.0;

  Vector to_native(const Vector& u) const { return lo + (hi - lo).cwiseProduct(u); }
  Vector to_unit(const Vector& x) const { return (x - lo).cwiseQuotient(hi - lo); }
  bool feasible(const Vector& x) const { return constraint(x) >= lambda; }

  void validate() const {
    if (dims <= 0 || lo.size() != dims || hi.size() != dims) throw std::invalid_argument(name + ": bad domain");
    if (!((hi - lo).array() > 0.0).all()) throw std::invalid_argument(name + ": empty domain");
    if (!(f_min <= f_opt)) throw std::invalid_argument(name + ": f_min exceeds f_opt");
    if (!std::isfinite(lambda)) throw std::invalid_argument(name + ": lambda must be finite");
  }
};

inline ProblemSpec gardner2d() {
  ProblemSpec p;
  p.name = "gardner2d";
  p.dims = 2;
  p.objective = [](const Vector& x) { return -std::cos(2 * x(0)) * std::cos(x(1)) - std::sin(x(0)); };
  p.constraint = [](const Vector& x) {
    return -std::cos(x(0)) * std::cos(x(1)) + std::sin(x(0)) * std::sin(x(1));
  };
  p.lo = Vector::Zero(2);
  p.hi = Vector::Constant(2, 6.0);
  p.lambda = 0.5;
  p.f_opt = 1.88875;
  p.f_min = -2.0;
  return p;
}

namespace detail {

inline constexpr std::array<double, 4> kHartmannAlpha{1.0, 1.2, 3.0, 3.2};
inline constexpr std::array<std::array<double, 6>, 4> kHartmannA{{
    {10, 3, 17, 3.5, 1.7, 8},
    {0.05, 10, 17, 0.1, 8, 14},
    {3, 3.5, 1.7, 10, 17, 8},
    {17, 8, 0.05, 10, 0.1, 14},
}};
inline constexpr std::array<std::array<double, 6>, 4> kHartmannP{{
    {1312, 1696, 5569, 124, 8283, 5886},
    {2329, 4135, 8307, 3736, 1004, 9991},
    {2348, 1451, 3522, 2883, 3047, 6650},
    {4047, 8828, 8732, 5743, 1091, 381},
}};

}  // namespace detail

/// Positive Hartmann-6; maximum 3.32237 near (0.2017, 0.1500, 0.4769, 0.2753, 0.3117, 0.6573).
inline double hartmann6(const Vector& x) {
  double f = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      const double d = x(static_cast<Eigen::Index>(j)) - 1e-4 * detail::kHartmannP[i][j];
      s += detail::kHartmannA[i][j] * d * d;
    }
    f += detail::kHartmannAlpha[i] * std::exp(-s);
  }
  return f;
}

inline ProblemSpec hartmann6c() {
  ProblemSpec p;
  p.name = "hartmann6";
  p.dims = 6;
  p.objective = hartmann6;
  p.constraint = [](const Vector& x) { return -x.norm(); };
  p.lo = Vector::Zero(6);
  p.hi = Vector::Ones(6);
  p.lambda = -1.0;
  p.f_opt = 3.32237;
  p.f_min = 0.0;
  return p;
}

/// Seeded constraint made of three Gaussian bumps on [0,1]^6.
struct BumpField {
  std::array<Vector, 3> centers;
  std::array<double, 3> scales{};

  double operator()(const Vector& x) const {
    double c = 0.0;
    for (std::size_t k = 0; k < 3; ++k)
      c += std::exp(-0.5 * (x - centers[k]).squaredNorm() / (scales[k] * scales[k]));
    return c;
  }
};

struct RefMatchInstance {
  BumpField field;
  Vector reference;
  double lambda = 0.0;
  double max_gap = 0.0;
  std::vector<Vector> lambda_samples;  // the uniform draws lambda averages over
};

inline RefMatchInstance make_refmatch6(std::uint64_t seed) {
  RefMatchInstance inst;
  std::mt19937_64 rng(mix_seed(seed, 0x7265666dULL));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 0.3);
  for (std::size_t k = 0; k < 3; ++k) {
    inst.field.centers[k] = Vector(6);
    for (Eigen::Index d = 0; d < 6; ++d) inst.field.centers[k](d) = unif(rng);
    inst.field.scales[k] = scale(rng);
  }
  double sum = 0.0;
  Vector x(6);
  for (int s = 0; s < 1000; ++s) {
    for (Eigen::Index d = 0; d < 6; ++d) x(d) = unif(rng);
    sum += inst.field(x);
    inst.lambda_samples.push_back(x);
  }
  inst.lambda = sum / 1000.0;
  do {
    for (Eigen::Index d = 0; d < 6; ++d) x(d) = unif(rng);
  } while (inst.field(x) < inst.lambda);
  inst.reference = x;
  for (Eigen::Index d = 0; d < 6; ++d) inst.max_gap += std::max(x(d), 1.0 - x(d));
  return inst;
}

/// Reference matching in 6D: the objective is minus the L1 distance to a
/// feasible reference, so the optimality gap is the parameter gap.
inline ProblemSpec refmatch6(std::uint64_t seed) {
  const RefMatchInstance inst = make_refmatch6(seed);
  ProblemSpec p;
  p.name = "refmatch6";
  p.dims = 6;
  p.objective = [ref = inst.reference](const Vector& x) { return -(x - ref).lpNorm<1>(); };
  p.constraint = inst.field;
  p.lo = Vector::Zero(6);
  p.hi = Vector::Ones(6);
  p.lambda = inst.lambda;
  p.f_opt = 0.0;
  p.f_min = -inst.max_gap;
  return p;
}

inline ProblemSpec make_problem(const std::string& name, std::uint64_t seed) {
  if (name == "gardner2d") return gardner2d();
  if (name == "hartmann6" || name == "hartmann6c") return hartmann6c();
  if (name == "refmatch6") return refmatch6(seed);
  throw std::invalid_argument("unknown problem \"" + name + "\"");
}

}  // namespace cpbo::bench

#endif
