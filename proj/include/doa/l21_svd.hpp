#pragma once

// Mixed l2,1-norm sparse recovery with SVD dimensionality reduction:
//
//   min ||S||_{2,1}  s.t.  ||Y_dr - A_G S||_F <= eta
//
// solved by ADMM on the splitting S = W, A_G S = Z, where W carries the
// row-sparsity term (group soft-thresholding) and Z the Frobenius-ball
// constraint (projection onto the eta-ball around Y_dr).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "doa/array_model.hpp"
#include "doa/estimators.hpp"
#include "doa/numerics.hpp"

namespace doa {

struct BpdnConfig {
  double eta = 0.0;
  std::size_t max_iterations = 2000;
  double primal_tol = 1e-4;
  double dual_tol = 1e-4;
  double penalty = 1.0;

  void validate() const {
    if (!(eta >= 0.0)) throw DomainError("BpdnConfig: eta must be non-negative");
    if (!(primal_tol > 0.0) || !(dual_tol > 0.0)) throw DomainError("BpdnConfig: tolerances must be positive");
    if (!(penalty > 0.0)) throw DomainError("BpdnConfig: penalty must be positive");
  }
};

struct L21Result {
  EstimateSet estimates;
  std::vector<double> row_power;         ///< squared row norms of the recovered S
  ComplexMatrix solution;                ///< |G| x R, reduced-dimension solution
  std::vector<double> objective_trace;   ///< ||S||_{2,1} per iteration, data units
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;               ///< zero solution is feasible
  double residual_norm = 0.0;            ///< ||Y_dr - A_G S||_F
};

/// Y V D_R^T = U_R diag(L_R), R the numerical rank of Y.
inline ComplexMatrix dimensionality_reduce(const ComplexMatrix& y) {
  const auto svd = numerics::complex_svd(y);
  const auto r = static_cast<Eigen::Index>(svd.rank());
  return svd.u.leftCols(r) * svd.singular_values.head(r).asDiagonal();
}

inline ComplexMatrix dimensionality_reduce(const SnapshotBlock& block) {
  return dimensionality_reduce(block.data);
}

inline double l21_norm(const ComplexMatrix& s) { return s.rowwise().norm().sum(); }

namespace detail {

// Row-wise group soft threshold: row * max(0, 1 - tau / ||row||).
inline void group_soft_threshold(ComplexMatrix& s, double tau) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double norm = s.row(i).norm();
    if (norm <= tau) {
      s.row(i).setZero();
    } else {
      s.row(i) *= (1.0 - tau / norm);
    }
  }
}

inline void project_ball(ComplexMatrix& z, const ComplexMatrix& center, double radius) {
  const ComplexMatrix d = z - center;
  const double norm = d.norm();
  if (norm > radius) z = center + d * (radius / norm);
}

}  // namespace detail

/// Solves the reduced BPDN problem for a given dictionary and reduced data.
///
/// The data are normalised by ||Y_dr||_F before iterating (the problem is
/// homogeneous in (Y, eta, S)), and the solution is scaled back.
inline L21Result solve_l21_bpdn(const ComplexMatrix& y_dr, const ComplexMatrix& dictionary, const BpdnConfig& cfg) {
  cfg.validate();
  const auto g = dictionary.cols();
  const auto r = y_dr.cols();
  L21Result result;
  const double scale = y_dr.norm();
  if (scale <= cfg.eta || scale == 0.0) {
    result.degenerate = true;
    result.converged = true;
    result.solution = ComplexMatrix::Zero(g, r);
    result.row_power.assign(static_cast<std::size_t>(g), 0.0);
    result.residual_norm = scale;
    return result;
  }

  const ComplexMatrix y = y_dr / scale;
  const double eta = cfg.eta / scale;
  double rho = cfg.penalty;
  const auto n = dictionary.rows();
  const ComplexMatrix& a = dictionary;

  // (I + A^H A)^{-1} via Woodbury: I - A^H (I + A A^H)^{-1} A.
  const ComplexMatrix inner = (ComplexMatrix::Identity(n, n) + a * a.adjoint()).inverse();
  const ComplexMatrix ah_inner_a = a.adjoint() * inner * a;
  auto solve_normal = [&](const ComplexMatrix& rhs) -> ComplexMatrix { return rhs - ah_inner_a * rhs; };

  ComplexMatrix s = ComplexMatrix::Zero(g, r);
  ComplexMatrix w = s;
  ComplexMatrix z = y;
  detail::project_ball(z, y, eta);
  ComplexMatrix u1 = ComplexMatrix::Zero(g, r);
  ComplexMatrix u2 = ComplexMatrix::Zero(n, r);
  const double abs_tol = 1e-12;

  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    s = solve_normal(w - u1 + a.adjoint() * (z - u2));
    const ComplexMatrix as = a * s;

    const ComplexMatrix w_old = w;
    const ComplexMatrix z_old = z;
    w = s + u1;
    detail::group_soft_threshold(w, 1.0 / rho);
    z = as + u2;
    detail::project_ball(z, y, eta);

    u1 += s - w;
    u2 += as - z;

    result.iterations = it + 1;
    result.objective_trace.push_back(l21_norm(w) * scale);

    const double primal = std::sqrt((s - w).squaredNorm() + (as - z).squaredNorm());
    const double dual = rho * ((w - w_old) + a.adjoint() * (z - z_old)).norm();
    const double x_norm = std::sqrt(s.squaredNorm() + as.squaredNorm());
    const double z_norm = std::sqrt(w.squaredNorm() + z.squaredNorm());
    const double eps_primal = abs_tol + cfg.primal_tol * std::max(x_norm, z_norm);
    const double eps_dual = abs_tol + cfg.dual_tol * rho * (u1 + a.adjoint() * u2).norm();
    if (it > 0 && primal <= eps_primal && dual <= eps_dual) {
      result.converged = true;
      break;
    }
    // residual balancing; u is the scaled dual so it rescales with rho
    if (primal > 10.0 * dual) {
      rho *= 2.0;
      u1 /= 2.0;
      u2 /= 2.0;
    } else if (dual > 10.0 * primal) {
      rho /= 2.0;
      u1 *= 2.0;
      u2 *= 2.0;
    }
  }

  result.solution = w * scale;
  result.residual_norm = (y_dr - a * result.solution).norm();
  result.row_power.resize(static_cast<std::size_t>(g));
  for (Eigen::Index i = 0; i < g; ++i) result.row_power[static_cast<std::size_t>(i)] = result.solution.row(i).squaredNorm();
  return result;
}

/// l2,1-SVD DoA estimation from a snapshot matrix. Row powers of the
/// recovered S equal those of the reduced solution because the rows are only
/// rotated by the orthonormal V D_R^T.
inline L21Result l21_svd(const ComplexMatrix& y, const GridSpec& grid, const UlaGeometry& geom,
                         const BpdnConfig& cfg, std::size_t k) {
  const ComplexMatrix y_dr = dimensionality_reduce(y);
  const ComplexMatrix dictionary = manifold(geom, grid.angles());
  L21Result result = solve_l21_bpdn(y_dr, dictionary, cfg);
  if (k > 0) result.estimates = pick_peaks(result.row_power, grid, k);
  return result;
}

inline L21Result l21_svd(const SnapshotBlock& block, const GridSpec& grid, const UlaGeometry& geom,
                         const BpdnConfig& cfg, std::size_t k) {
  return l21_svd(block.data, grid, geom, cfg, k);
}

}  // namespace doa
