#pragma once

// Narrowband far-field signal model for a uniform linear array: steering
// vectors, true and sample covariances, snapshot simulation, and the
// covariance/label encodings consumed by the network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "doa/errors.hpp"
#include "doa/numerics.hpp"
#include "doa/random.hpp"
#include "doa/tensor.hpp"

namespace doa {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

struct UlaGeometry {
  std::size_t n_sensors = 16;
  double spacing_ratio = 0.5;  ///< element spacing d / wavelength

  void validate() const {
    if (n_sensors < 2) throw DomainError("UlaGeometry: need at least 2 sensors");
    if (!(spacing_ratio > 0.0)) throw DomainError("UlaGeometry: spacing ratio must be positive");
  }
  bool operator==(const UlaGeometry&) const = default;
};

struct SourceScene {
  std::vector<double> doas_deg;
  std::vector<double> source_powers;
  double noise_power = 0.0;

  [[nodiscard]] std::size_t size() const { return doas_deg.size(); }

  /// Unit-power sources with noise power set so that the SNR equals snr_db.
  static SourceScene with_snr(std::vector<double> doas_deg, double snr_db) {
    SourceScene scene;
    scene.source_powers.assign(doas_deg.size(), 1.0);
    scene.doas_deg = std::move(doas_deg);
    scene.noise_power = std::pow(10.0, -snr_db / 10.0);
    return scene;
  }

  void validate(const UlaGeometry& geom) const {
    geom.validate();
    if (source_powers.size() != doas_deg.size()) {
      throw DomainError("SourceScene: " + std::to_string(doas_deg.size()) + " DoAs but " +
                        std::to_string(source_powers.size()) + " powers");
    }
    if (doas_deg.size() >= geom.n_sensors) {
      throw DomainError("SourceScene: K = " + std::to_string(doas_deg.size()) +
                        " sources needs at least K + 1 sensors");
    }
    for (double p : source_powers) {
      if (!(p > 0.0)) throw DomainError("SourceScene: source powers must be positive");
    }
    if (!(noise_power >= 0.0)) throw DomainError("SourceScene: noise power must be non-negative");
    for (std::size_t i = 0; i < doas_deg.size(); ++i) {
      if (!(std::abs(doas_deg[i]) < 90.0)) throw DomainError("SourceScene: DoA outside (-90, 90)");
      for (std::size_t j = 0; j < i; ++j) {
        if (doas_deg[i] == doas_deg[j]) throw DomainError("SourceScene: DoAs must be distinct");
      }
    }
  }
};

/// Angle grid {-G rho, ..., 0, ..., G rho}.
struct GridSpec {
  std::size_t half_points = 60;  ///< G
  double resolution_deg = 1.0;   ///< rho

  static GridSpec from_phi_max(double phi_max_deg, double resolution_deg) {
    const double g = std::round(phi_max_deg / resolution_deg);
    if (g < 0 || std::abs(g * resolution_deg - phi_max_deg) > 1e-9) {
      throw DomainError("GridSpec: phi_max must be a multiple of the resolution");
    }
    return {static_cast<std::size_t>(g), resolution_deg};
  }

  [[nodiscard]] std::size_t size() const { return 2 * half_points + 1; }
  [[nodiscard]] double phi_max_deg() const { return static_cast<double>(half_points) * resolution_deg; }
  [[nodiscard]] double angle(std::size_t i) const {
    return (static_cast<double>(i) - static_cast<double>(half_points)) * resolution_deg;
  }
  [[nodiscard]] std::vector<double> angles() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = angle(i);
    return out;
  }
  /// Grid index of an angle that lies on the grid within tol_deg.
  [[nodiscard]] std::optional<std::size_t> index_of(double angle_deg, double tol_deg = 1e-9) const {
    const double pos = angle_deg / resolution_deg + static_cast<double>(half_points);
    const double idx = std::round(pos);
    if (idx < 0 || idx >= static_cast<double>(size())) return std::nullopt;
    if (std::abs(angle(static_cast<std::size_t>(idx)) - angle_deg) > tol_deg) return std::nullopt;
    return static_cast<std::size_t>(idx);
  }
  /// Nearest grid index, clamped to the grid.
  [[nodiscard]] std::size_t nearest_index(double angle_deg) const {
    const double pos = std::round(angle_deg / resolution_deg + static_cast<double>(half_points));
    return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(size() - 1)));
  }
  bool operator==(const GridSpec&) const = default;
};

struct SnapshotBlock {
  UlaGeometry geometry;
  ComplexMatrix data;  ///< N x T, column t is y(t)

  [[nodiscard]] std::size_t snapshots() const { return static_cast<std::size_t>(data.cols()); }
};

/// N x N x 3 network input: Re, Im and phase of a covariance matrix.
class CovarianceInput {
 public:
  CovarianceInput() = default;
  explicit CovarianceInput(Tensor channels) : channels_(std::move(channels)) {
    if (channels_.rank() != 3 || channels_.shape[0] != channels_.shape[1] || channels_.shape[2] != 3) {
      throw DomainError("CovarianceInput: expected N x N x 3, got " + shape_string(channels_.shape));
    }
  }

  [[nodiscard]] std::size_t n() const { return channels_.shape.empty() ? 0 : channels_.shape[0]; }
  [[nodiscard]] double re(std::size_t i, std::size_t j) const { return channels_.at(i, j, 0); }
  [[nodiscard]] double im(std::size_t i, std::size_t j) const { return channels_.at(i, j, 1); }
  [[nodiscard]] double phase(std::size_t i, std::size_t j) const { return channels_.at(i, j, 2); }
  [[nodiscard]] const Tensor& tensor() const { return channels_; }

  bool operator==(const CovarianceInput&) const = default;

 private:
  Tensor channels_;
};

struct LabelVector {
  std::vector<std::uint8_t> bits;

  [[nodiscard]] std::size_t size() const { return bits.size(); }
  [[nodiscard]] std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool operator==(const LabelVector&) const = default;
};

// ---------------------------------------------------------------------------

/// a(theta)_n = exp(j 2 pi (d / lambda) sin(theta) n), n = 0..N-1.
inline ComplexVector steering_vector(const UlaGeometry& geom, double theta_deg) {
  geom.validate();
  if (!(std::abs(theta_deg) < 90.0)) {
    throw DomainError("steering_vector: |theta| must be below 90 degrees, got " + std::to_string(theta_deg));
  }
  const double psi = 2.0 * std::numbers::pi * geom.spacing_ratio * std::sin(theta_deg * kDegToRad);
  ComplexVector a(static_cast<Eigen::Index>(geom.n_sensors));
  for (Eigen::Index n = 0; n < a.size(); ++n) a(n) = std::polar(1.0, psi * static_cast<double>(n));
  return a;
}

/// Derivative of the steering vector with respect to theta in radians.
inline ComplexVector steering_derivative(const UlaGeometry& geom, double theta_deg) {
  const double dpsi = 2.0 * std::numbers::pi * geom.spacing_ratio * std::cos(theta_deg * kDegToRad);
  ComplexVector a = steering_vector(geom, theta_deg);
  for (Eigen::Index n = 0; n < a.size(); ++n) a(n) *= Complex(0.0, dpsi * static_cast<double>(n));
  return a;
}

inline ComplexMatrix manifold(const UlaGeometry& geom, const std::vector<double>& thetas_deg) {
  for (std::size_t i = 0; i < thetas_deg.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (thetas_deg[i] == thetas_deg[j]) throw DomainError("manifold: duplicate angle");
    }
  }
  ComplexMatrix a(static_cast<Eigen::Index>(geom.n_sensors), static_cast<Eigen::Index>(thetas_deg.size()));
  for (std::size_t k = 0; k < thetas_deg.size(); ++k) {
    a.col(static_cast<Eigen::Index>(k)) = steering_vector(geom, thetas_deg[k]);
  }
  return a;
}

/// R = A diag(powers) A^H + noise I.
inline ComplexMatrix true_covariance(const UlaGeometry& geom, const SourceScene& scene) {
  scene.validate(geom);
  const auto n = static_cast<Eigen::Index>(geom.n_sensors);
  ComplexMatrix r = scene.noise_power * ComplexMatrix::Identity(n, n);
  if (scene.size() > 0) {
    const ComplexMatrix a = manifold(geom, scene.doas_deg);
    RealVector p(static_cast<Eigen::Index>(scene.size()));
    for (std::size_t k = 0; k < scene.size(); ++k) p(static_cast<Eigen::Index>(k)) = scene.source_powers[k];
    r += a * p.asDiagonal() * a.adjoint();
  }
  return numerics::hermitize(std::move(r));
}

/// Draws y(t) = A s(t) + e(t). For each t the generator is consumed in the
/// order s_1(t) .. s_K(t), e_1(t) .. e_N(t), each a CN(0, 1) draw scaled by
/// the corresponding standard deviation.
inline SnapshotBlock simulate_snapshots(const UlaGeometry& geom, const SourceScene& scene,
                                        std::size_t snapshots, std::uint64_t seed) {
  scene.validate(geom);
  if (snapshots < 1) throw DomainError("simulate_snapshots: need at least one snapshot");
  const auto n = static_cast<Eigen::Index>(geom.n_sensors);
  const auto k = static_cast<Eigen::Index>(scene.size());
  const auto t_count = static_cast<Eigen::Index>(snapshots);

  ComplexMatrix s(k, t_count);
  ComplexMatrix e(n, t_count);
  std::vector<double> source_std(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) source_std[i] = std::sqrt(scene.source_powers[i]);
  const double noise_std = std::sqrt(scene.noise_power);

  Rng rng(seed);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (Eigen::Index i = 0; i < k; ++i) s(i, t) = source_std[static_cast<std::size_t>(i)] * rng.complex_normal();
    for (Eigen::Index i = 0; i < n; ++i) e(i, t) = noise_std * rng.complex_normal();
  }
  SnapshotBlock block{geom, std::move(e)};
  if (k > 0) block.data += manifold(geom, scene.doas_deg) * s;
  return block;
}

/// (1/T) sum_t y(t) y(t)^H.
inline ComplexMatrix sample_covariance(const SnapshotBlock& block) {
  if (block.data.cols() == 0 || block.data.rows() == 0) throw DomainError("sample_covariance: empty block");
  ComplexMatrix r = block.data * block.data.adjoint();
  r /= static_cast<double>(block.data.cols());
  return numerics::hermitize(std::move(r));
}

/// 10 log10(min_k power_k / noise).
inline double snr_db(const SourceScene& scene) {
  if (scene.source_powers.empty()) throw DomainError("snr_db: scene has no sources");
  if (!(scene.noise_power > 0.0)) throw DomainError("snr_db: noise power is zero (infinite SNR)");
  const double pmin = *std::min_element(scene.source_powers.begin(), scene.source_powers.end());
  return 10.0 * std::log10(pmin / scene.noise_power);
}

/// Four-quadrant phase in (-pi, pi]; the phase of 0 is 0.
inline double phase_angle(Complex z) {
  double p = std::atan2(z.imag(), z.real());
  if (p <= -std::numbers::pi) p = std::numbers::pi;
  return p + 0.0;  // folds -0 to +0
}

inline CovarianceInput build_input_channels(const ComplexMatrix& r) {
  if (r.rows() != r.cols()) throw DomainError("build_input_channels: matrix must be square");
  const auto n = static_cast<std::size_t>(r.rows());
  Tensor x({n, n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Complex v = r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      x.at(i, j, 0) = v.real();
      x.at(i, j, 1) = v.imag();
      x.at(i, j, 2) = phase_angle(v);
    }
  }
  return CovarianceInput(std::move(x));
}

/// Binary indicator of on-grid DoAs. Off-grid angles are rejected, never snapped.
inline LabelVector encode_label(const GridSpec& grid, const std::vector<double>& doas_deg) {
  LabelVector z{std::vector<std::uint8_t>(grid.size(), 0)};
  for (double a : doas_deg) {
    const auto idx = grid.index_of(a);
    if (!idx) throw DomainError("encode_label: angle " + std::to_string(a) + " is not on the grid");
    if (z.bits[*idx]) throw DomainError("encode_label: duplicate angle " + std::to_string(a));
    z.bits[*idx] = 1;
  }
  return z;
}

inline std::vector<double> decode_label(const GridSpec& grid, const LabelVector& label) {
  std::vector<double> out;
  for (std::size_t i = 0; i < label.size() && i < grid.size(); ++i) {
    if (label.bits[i]) out.push_back(grid.angle(i));
  }
  return out;
}

}  // namespace doa
