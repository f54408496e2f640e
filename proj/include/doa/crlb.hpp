#pragma once

#include <cmath>
#include <vector>

#include "doa/array_model.hpp"
#include "doa/errors.hpp"
#include "doa/numerics.hpp"

namespace doa {

/// Stochastic (unconditional) Cramer-Rao bound for the DoAs of uncorrelated
/// sources:
///
///   CRB = sigma^2 / (2T) * { Re[ (D^H P_A^perp D) .* (P A^H R^-1 A P)^T ] }^-1
///
/// with P = diag(powers), D the steering derivatives w.r.t. theta (radians)
/// and P_A^perp the projector onto the orthogonal complement of range(A).
/// Returns the per-source standard-deviation bound in degrees.
inline std::vector<double> crlb_unconditional(const UlaGeometry& geom, const SourceScene& scene, std::size_t snapshots) {
  const std::size_t k = scene.size();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      if (scene.doas_deg[i] == scene.doas_deg[j]) throw NumericalError("crlb: coincident angles give a singular Fisher information");
  scene.validate(geom);
  if (k < 1 || k >= geom.n_sensors) throw DomainError("crlb: need 1 <= K < N");
  if (!(scene.noise_power > 0.0)) throw DomainError("crlb: noise power must be positive");
  if (snapshots < k + 1) throw DomainError("crlb: need T >= K + 1");

  const auto n = static_cast<Eigen::Index>(geom.n_sensors);
  const ComplexMatrix a = manifold(geom, scene.doas_deg);
  ComplexMatrix d(n, static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) d.col(static_cast<Eigen::Index>(i)) = steering_derivative(geom, scene.doas_deg[i]);
  ComplexMatrix p = ComplexMatrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = scene.source_powers[i];

  const ComplexMatrix r = true_covariance(geom, scene);
  const ComplexMatrix r_inv = r.ldlt().solve(ComplexMatrix::Identity(n, n));
  const ComplexMatrix ah_a = a.adjoint() * a;
  const ComplexMatrix proj_perp = ComplexMatrix::Identity(n, n) - a * ah_a.ldlt().solve(a.adjoint());

  const ComplexMatrix left = d.adjoint() * proj_perp * d;
  const ComplexMatrix right = p * a.adjoint() * r_inv * a * p;
  const Eigen::MatrixXd h = left.cwiseProduct(right.transpose()).real();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) throw NumericalError("crlb: singular Fisher information");
  const Eigen::MatrixXd crb = (scene.noise_power / (2.0 * static_cast<double>(snapshots))) * lu.inverse();

  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double v = crb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    if (!(v > 0.0)) throw NumericalError("crlb: non-positive variance bound");
    out[i] = std::sqrt(v) * kRadToDeg;
  }
  return out;
}

/// Root of the mean CRB variance over sources, in degrees; comparable to RMSE.
inline double crlb_rms(const UlaGeometry& geom, const SourceScene& scene, std::size_t snapshots) {
  const auto b = crlb_unconditional(geom, scene, snapshots);
  double s = 0.0;
  for (double v : b) s += v * v;
  return std::sqrt(s / static_cast<double>(b.size()));
}

}  // namespace doa
