#pragma once

// Subspace estimators: grid MUSIC and Root-MUSIC, plus the shared peak picker.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "doa/array_model.hpp"
#include "doa/errors.hpp"
#include "doa/numerics.hpp"

namespace doa {

/// Ascending, pairwise-distinct DoA estimates in degrees.
struct EstimateSet {
  std::vector<double> angles_deg;

  [[nodiscard]] std::size_t size() const { return angles_deg.size(); }
  bool operator==(const EstimateSet&) const = default;
};

struct MusicSpectrum {
  GridSpec grid;
  std::vector<double> values;
};

inline constexpr double kMusicDenominatorFloor = 1e-12;

/// Eigenvectors of the N - K smallest eigenvalues of R, as an N x (N - K) matrix.
inline ComplexMatrix noise_subspace(const ComplexMatrix& r, std::size_t k) {
  const auto n = static_cast<std::size_t>(r.rows());
  if (k < 1 || k >= n) {
    throw DomainError("noise_subspace: need 1 <= K < N, got K = " + std::to_string(k) + ", N = " + std::to_string(n));
  }
  const auto eig = numerics::hermitian_eig(r);
  return eig.eigenvectors.rightCols(static_cast<Eigen::Index>(n - k));
}

/// P(phi) = 1 / (a(phi)^H Qe Qe^H a(phi)) on every grid point.
inline MusicSpectrum music_spectrum(const ComplexMatrix& r, std::size_t k, const GridSpec& grid,
                                    const UlaGeometry& geom) {
  const ComplexMatrix qe = noise_subspace(r, k);
  MusicSpectrum spectrum{grid, std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const ComplexVector proj = qe.adjoint() * steering_vector(geom, grid.angle(i));
    spectrum.values[i] = 1.0 / std::max(proj.squaredNorm(), kMusicDenominatorFloor);
  }
  return spectrum;
}

/// Picks the K largest local maxima of a grid function.
///
/// A point is a local maximum if it is >= both neighbours (one neighbour at
/// the boundary). Candidates are taken by decreasing value, ties toward the
/// smaller angle, skipping any within rho/2 of an earlier pick. If fewer than K
/// survive, the largest remaining points fill the set. Output is ascending.
inline EstimateSet pick_peaks(const std::vector<double>& values, const GridSpec& grid, std::size_t k) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

  auto is_local_max = [&](std::size_t i) {
    const bool left = i == 0 || values[i] >= values[i - 1];
    const bool right = i + 1 == n || values[i] >= values[i + 1];
    return left && right;
  };

  std::vector<std::size_t> picked;
  std::vector<bool> taken(n, false);
  auto too_close = [&](std::size_t i) {
    return std::any_of(picked.begin(), picked.end(), [&](std::size_t j) {
      return std::abs(grid.angle(i) - grid.angle(j)) < 0.5 * grid.resolution_deg;
    });
  };
  for (std::size_t i : order) {
    if (picked.size() == k) break;
    if (is_local_max(i) && !too_close(i)) {
      picked.push_back(i);
      taken[i] = true;
    }
  }
  for (std::size_t i : order) {
    if (picked.size() == k) break;
    if (!taken[i] && !too_close(i)) {
      picked.push_back(i);
      taken[i] = true;
    }
  }
  EstimateSet out;
  for (std::size_t i : picked) out.angles_deg.push_back(grid.angle(i));
  std::sort(out.angles_deg.begin(), out.angles_deg.end());
  return out;
}

inline EstimateSet pick_peaks(const MusicSpectrum& spectrum, std::size_t k) {
  return pick_peaks(spectrum.values, spectrum.grid, k);
}

inline EstimateSet music(const ComplexMatrix& r, std::size_t k, const GridSpec& grid, const UlaGeometry& geom) {
  return pick_peaks(music_spectrum(r, k, grid, geom), k);
}

/// Coefficients (ascending powers of z) of z^(N-1) * sum_l C_l z^l with
/// C = Qe Qe^H and C_l = sum_{n - m = l} C_mn, where z = exp(j 2 pi d sin theta).
inline std::vector<Complex> root_music_polynomial(const ComplexMatrix& qe) {
  const ComplexMatrix c = qe * qe.adjoint();
  const auto n = c.rows();
  std::vector<Complex> coeffs(static_cast<std::size_t>(2 * n - 1), Complex{0.0, 0.0});
  for (Eigen::Index m = 0; m < n; ++m) {
    for (Eigen::Index col = 0; col < n; ++col) coeffs[static_cast<std::size_t>(col - m + n - 1)] += c(m, col);
  }
  return coeffs;
}

/// Maps a root on (or near) the unit circle to a DoA in degrees.
inline double root_to_doa_deg(Complex z, const UlaGeometry& geom) {
  const double s = std::arg(z) / (2.0 * std::numbers::pi * geom.spacing_ratio);
  return std::asin(std::clamp(s, -1.0, 1.0)) * kRadToDeg;
}

/// Pairs each root z with its conjugate-reciprocal partner 1 / conj(z) and
/// keeps one root per pair (N - 1 in all): the phase of the member of smaller
/// modulus with the modulus folded inside the unit circle. Double roots on the
/// circle split numerically in any direction, so "the roots inside the circle"
/// is only well defined pair by pair.
inline std::vector<Complex> inner_roots(const std::vector<Complex>& roots) {
  std::vector<bool> used(roots.size(), false);
  std::vector<Complex> out;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    const Complex mirror = 1.0 / std::conj(roots[i]);
    std::size_t best = roots.size();
    for (std::size_t j = 0; j < roots.size(); ++j) {
      if (!used[j] && (best == roots.size() || std::abs(roots[j] - mirror) < std::abs(roots[best] - mirror))) best = j;
    }
    if (best == roots.size()) {
      out.push_back(std::polar(std::min(std::abs(roots[i]), 1.0 / std::abs(roots[i])), std::arg(roots[i])));
      continue;
    }
    used[best] = true;
    const Complex inner = std::abs(roots[best]) < std::abs(roots[i]) ? roots[best] : roots[i];
    const double a = std::abs(roots[i]), b = std::abs(roots[best]);
    const double modulus = std::min({a, b, 1.0 / a, 1.0 / b});
    out.push_back(std::polar(modulus, std::arg(inner)));
  }
  return out;
}

/// Root-MUSIC: among the inner roots strictly inside the unit circle, the K
/// closest to it give the DoAs (ties: larger |z|, then smaller phase). If
/// fewer than K lie strictly inside, roots with |z| <= 1 + 1e-9 are admitted.
inline EstimateSet root_music(const ComplexMatrix& r, std::size_t k, const UlaGeometry& geom) {
  if (geom.spacing_ratio > 0.5) throw DomainError("root_music: spacing ratio above 0.5 is ambiguous");
  const auto coeffs = root_music_polynomial(noise_subspace(r, k));
  const auto roots = inner_roots(numerics::polynomial_roots(coeffs));

  auto select = [&](double radius, bool strict) {
    std::vector<Complex> inside;
    for (const auto& z : roots) {
      const double a = std::abs(z);
      if (strict ? a < radius : a <= radius) inside.push_back(z);
    }
    return inside;
  };
  std::vector<Complex> candidates = select(1.0, true);
  if (candidates.size() < k) candidates = select(1.0 + 1e-9, false);
  if (candidates.size() < k) {
    throw EstimatorFailure("root_music: only " + std::to_string(candidates.size()) +
                           " roots inside the unit circle, need " + std::to_string(k));
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](Complex a, Complex b) {
    const double da = std::abs(1.0 - std::abs(a));
    const double db = std::abs(1.0 - std::abs(b));
    if (da != db) return da < db;
    if (std::abs(a) != std::abs(b)) return std::abs(a) > std::abs(b);
    return std::arg(a) < std::arg(b);
  });
  EstimateSet out;
  for (std::size_t i = 0; i < k; ++i) out.angles_deg.push_back(root_to_doa_deg(candidates[i], geom));
  std::sort(out.angles_deg.begin(), out.angles_deg.end());
  return out;
}

}  // namespace doa
