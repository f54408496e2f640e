#pragma once

// Dense complex linear algebra kernels used by the estimators.
//
// Storage is Eigen's (column-major). Every routine is a pure function of its
// arguments and may be called concurrently.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "doa/errors.hpp"

namespace doa {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

namespace numerics {

inline constexpr double kHermitianTolerance = 1e-10;

inline double max_abs_entry(const ComplexMatrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// max |M_ij - conj(M_ji)| <= rel_tol * max |M_ij|.
inline bool is_hermitian(const ComplexMatrix& m, double rel_tol = kHermitianTolerance) {
  if (m.rows() != m.cols()) return false;
  const double scale = max_abs_entry(m);
  if (scale == 0.0) return true;
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// (M + M^H) / 2, with each mirrored pair written from one value so the
/// result is Hermitian bit for bit.
inline ComplexMatrix hermitize(ComplexMatrix m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    m(j, j) = Complex(m(j, j).real(), 0.0);
    for (Eigen::Index i = j + 1; i < m.rows(); ++i) {
      const Complex upper = 0.5 * (m(j, i) + std::conj(m(i, j)));
      m(j, i) = upper;
      m(i, j) = std::conj(upper);
    }
  }
  return m;
}

struct EigenDecomposition {
  RealVector eigenvalues;     ///< non-increasing
  ComplexMatrix eigenvectors;  ///< column i pairs with eigenvalue i
};

inline EigenDecomposition hermitian_eig(const ComplexMatrix& m) {
  if (m.rows() != m.cols()) {
    throw DomainError("hermitian_eig: matrix is " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected square");
  }
  if (!is_hermitian(m)) throw DomainError("hermitian_eig: matrix is not Hermitian");

  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(m, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("hermitian_eig: no convergence for " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " matrix");
  }
  // Eigen sorts ascending; reverse to descending.
  const Eigen::Index n = m.rows();
  EigenDecomposition out{RealVector(n), ComplexMatrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.eigenvalues(i) = solver.eigenvalues()(n - 1 - i);
    out.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

struct SvdResult {
  ComplexMatrix u;            ///< rows x p, orthonormal columns, p = min(rows, cols)
  RealVector singular_values;  ///< non-negative, non-increasing
  ComplexMatrix v;            ///< cols x p, orthonormal columns

  /// Number of singular values above rel_tol * largest.
  [[nodiscard]] std::size_t rank(double rel_tol = 1e-10) const {
    if (singular_values.size() == 0 || singular_values(0) == 0.0) return 0;
    const double cut = rel_tol * singular_values(0);
    return static_cast<std::size_t>((singular_values.array() > cut).count());
  }
};

/// Thin SVD, Y = U diag(L) V^H.
inline SvdResult complex_svd(const ComplexMatrix& y) {
  if (y.size() == 0) throw DomainError("complex_svd: empty matrix");
  Eigen::BDCSVD<ComplexMatrix> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericalError("complex_svd: no convergence for " + std::to_string(y.rows()) + "x" +
                         std::to_string(y.cols()) + " matrix");
  }
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// Horner evaluation; coefficients in ascending powers.
inline Complex polyval(std::span<const Complex> coeffs, Complex z) {
  Complex acc{0.0, 0.0};
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * z + *it;
  return acc;
}

namespace detail {

inline Complex polyder_val(std::span<const Complex> coeffs, Complex z) {
  Complex acc{0.0, 0.0};
  for (std::size_t k = coeffs.size(); k-- > 1;) acc = acc * z + static_cast<double>(k) * coeffs[k];
  return acc;
}

// A few Newton steps on the original polynomial; a step is kept only if it
// lowers |p|, so multiple roots (p' ~ 0) are left as the eigensolver found them.
inline Complex polish_root(std::span<const Complex> coeffs, Complex z) {
  Complex best = z;
  double best_res = std::abs(polyval(coeffs, z));
  for (int it = 0; it < 8 && best_res > 0.0; ++it) {
    const Complex d = polyder_val(coeffs, best);
    if (std::abs(d) == 0.0) break;
    const Complex cand = best - polyval(coeffs, best) / d;
    const double res = std::abs(polyval(coeffs, cand));
    if (!(res < best_res)) break;
    best = cand;
    best_res = res;
  }
  return best;
}

}  // namespace detail

/// Roots of sum_k coeffs[k] z^k, with multiplicity.
///
/// Trailing coefficients below 1e-12 * max|coeff| are trimmed before the
/// degree is fixed. Roots are the eigenvalues of the companion matrix of the
/// monic polynomial, each refined by guarded Newton steps.
inline std::vector<Complex> polynomial_roots(std::span<const Complex> coeffs) {
  double scale = 0.0;
  for (const auto& c : coeffs) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) throw DomainError("polynomial_roots: zero polynomial");

  std::size_t len = coeffs.size();
  while (len > 0 && std::abs(coeffs[len - 1]) <= 1e-12 * scale) --len;
  const std::size_t degree = len - 1;
  if (degree == 0) return {};

  const auto trimmed = coeffs.first(len);
  const Complex lead = trimmed[degree];
  const auto n = static_cast<Eigen::Index>(degree);
  ComplexMatrix companion = ComplexMatrix::Zero(n, n);
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) companion(i, n - 1) = -trimmed[static_cast<std::size_t>(i)] / lead;

  Eigen::ComplexEigenSolver<ComplexMatrix> solver(companion, false);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("polynomial_roots: companion eigensolver failed at degree " +
                         std::to_string(degree));
  }
  std::vector<Complex> roots(degree);
  for (Eigen::Index i = 0; i < n; ++i) roots[static_cast<std::size_t>(i)] = detail::polish_root(trimmed, solver.eigenvalues()(i));
  return roots;
}

}  // namespace numerics
}  // namespace doa
