#pragma once

// Dense solver for the motion-coherence system shared by all three M-steps:
//
//   (d(q) G + lambda sigma^2 I) W = B
//
// with q >= 0 the per-template posterior mass. With S = d(q)^(1/2) and
// W = S Z the system becomes (S G S + lambda sigma^2 I) Z = S^-1 B, which is
// symmetric positive definite, so it is factored with Cholesky and polished
// with one step of iterative refinement against the unscaled system.

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <limits>

#include "cpdreg/core.hpp"

namespace cpdreg {

struct MStepSolution {
  Matrix w;
  // |A W - B|_F / (|A|_F |W|_F + |B|_F), the normwise backward error.
  double relative_residual = 0.0;
};

namespace detail {

// Rows whose posterior mass is below this contribute a zero row.
inline constexpr double kTinyRowMass = 1e-300;

inline Matrix apply_system(const KernelMatrix& kernel, const Vector& q, double reg,
                           const Matrix& w) {
  Matrix out = kernel.g * w;
  for (Index m = 0; m < out.rows(); ++m) out.row(m) *= q(m);
  out += reg * w;
  return out;
}

inline double system_frobenius(const KernelMatrix& kernel, const Vector& q, double reg) {
  double s = 0.0;
  for (Index j = 0; j < kernel.size(); ++j) {
    for (Index i = 0; i < kernel.size(); ++i) {
      const double a = q(i) * kernel.g(i, j) + (i == j ? reg : 0.0);
      s += a * a;
    }
  }
  return std::sqrt(s);
}

inline double relative_residual(const KernelMatrix& kernel, const Vector& q, double reg,
                                const Matrix& w, const Matrix& rhs) {
  const double num = (apply_system(kernel, q, reg, w) - rhs).norm();
  const double den = system_frobenius(kernel, q, reg) * w.norm() + rhs.norm();
  return den > 0.0 ? num / den : num;
}

}  // namespace detail

/// Solves (d(q) G + reg I) W = rhs. `iteration` only labels errors.
inline MStepSolution solve_coherence_system(const KernelMatrix& kernel, const Vector& q,
                                            const Matrix& rhs, double reg, int iteration = 0) {
  const Index m = kernel.size();
  if (q.size() != m || rhs.rows() != m) {
    throw InputError("coherence system: inconsistent dimensions");
  }
  if (!(reg > 0.0) || !std::isfinite(reg)) {
    throw ParameterError("coherence system: lambda * sigma2 must be a finite positive value");
  }

  Vector s(m);
  for (Index i = 0; i < m; ++i) s(i) = q(i) >= detail::kTinyRowMass ? std::sqrt(q(i)) : 0.0;

  auto scale_down = [&](const Matrix& b) {
    Matrix out(b.rows(), b.cols());
    for (Index i = 0; i < m; ++i) {
      if (s(i) > 0.0) {
        out.row(i) = b.row(i) / s(i);
      } else {
        out.row(i).setZero();
      }
    }
    return out;
  };

  Matrix a = s.asDiagonal() * kernel.g * s.asDiagonal();
  a.diagonal().array() += reg;

  Eigen::LLT<Matrix> llt(a);
  MStepSolution sol;
  if (llt.info() == Eigen::Success) {
    sol.w = s.asDiagonal() * llt.solve(scale_down(rhs));
    const Matrix r = rhs - detail::apply_system(kernel, q, reg, sol.w);
    sol.w += s.asDiagonal() * llt.solve(scale_down(r));
  } else {
    // Round-off broke positive definiteness; fall back to pivoted LU on the
    // unscaled system.
    Matrix full = q.asDiagonal() * kernel.g;
    full.diagonal().array() += reg;
    Eigen::PartialPivLU<Matrix> lu(full);
    const double rc = lu.rcond();
    if (!(rc > std::numeric_limits<double>::epsilon())) {
      throw NumericalError("M-step system is numerically singular", iteration, rc);
    }
    sol.w = lu.solve(rhs);
    sol.w += lu.solve(rhs - full * sol.w);
  }

  if (!sol.w.allFinite()) {
    Matrix full = q.asDiagonal() * kernel.g;
    full.diagonal().array() += reg;
    throw NumericalError("M-step solution is not finite", iteration,
                         Eigen::PartialPivLU<Matrix>(full).rcond());
  }
  sol.relative_residual = detail::relative_residual(kernel, q, reg, sol.w, rhs);
  return sol;
}

}  // namespace cpdreg
