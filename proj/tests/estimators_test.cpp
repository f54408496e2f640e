#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "doa/estimators.hpp"
#include "doa/l21_svd.hpp"
#include "doa/random.hpp"

using namespace doa;

TEST(Music, ExactOnGridFromTrueCovariance) {
  const UlaGeometry geom{16, 0.5};
  const GridSpec grid{60, 1.0};
  const auto scene = SourceScene::with_snr({-21.0, 4.0, 37.0}, -10.0);
  const auto est = music(true_covariance(geom, scene), 3, grid, geom);
  EXPECT_EQ(est.angles_deg, scene.doas_deg);
}

TEST(Music, SpectrumPeaksAtSource) {
  const UlaGeometry geom{16, 0.5};
  const GridSpec grid{60, 1.0};
  const auto spec = music_spectrum(true_covariance(geom, SourceScene::with_snr({12.0}, 0.0)), 1, grid, geom);
  const auto peak = std::max_element(spec.values.begin(), spec.values.end()) - spec.values.begin();
  EXPECT_DOUBLE_EQ(grid.angle(static_cast<std::size_t>(peak)), 12.0);
  EXPECT_LE(*std::max_element(spec.values.begin(), spec.values.end()), 1.0 / kMusicDenominatorFloor);
}

TEST(Music, RejectsBadSourceCount) {
  const UlaGeometry geom{4, 0.5};
  const ComplexMatrix r = ComplexMatrix::Identity(4, 4);
  EXPECT_THROW(music(r, 0, GridSpec{10, 1.0}, geom), DomainError);
  EXPECT_THROW(music(r, 4, GridSpec{10, 1.0}, geom), DomainError);
}

TEST(RootMusic, ExactOffGridFromTrueCovariance) {
  const UlaGeometry geom{16, 0.5};
  const auto scene = SourceScene::with_snr({-13.18, -9.58, 40.3}, -10.0);
  const auto est = root_music(true_covariance(geom, scene), 3, geom);
  ASSERT_EQ(est.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(est.angles_deg[i], scene.doas_deg[i], 1e-6);
}

TEST(RootMusic, PolynomialVanishesAtTrueRoots) {
  const UlaGeometry geom{8, 0.5};
  const auto scene = SourceScene::with_snr({10.11, 13.3}, 0.0);
  const auto coeffs = root_music_polynomial(noise_subspace(true_covariance(geom, scene), 2));
  EXPECT_EQ(coeffs.size(), 15u);
  double scale = 0.0;
  for (const auto& c : coeffs) scale += std::abs(c);
  for (double theta : scene.doas_deg) {
    const Complex z = std::polar(1.0, 2.0 * std::numbers::pi * 0.5 * std::sin(theta * kDegToRad));
    EXPECT_LT(std::abs(numerics::polyval(coeffs, z)), 1e-10 * scale);
  }
}

TEST(RootMusic, RandomScenesFromTrueCovarianceAtAnyNoiseLevel) {
  const UlaGeometry geom{16, 0.5};
  Rng rng(404);
  for (int s = 0; s < 150; ++s) {
    const std::size_t k = 1 + static_cast<std::size_t>(s % 3);
    std::vector<double> doas;
    while (doas.size() < k) {
      const double a = -59.5 + 119.0 * rng.uniform();
      if (std::all_of(doas.begin(), doas.end(), [&](double b) { return std::abs(a - b) >= 2.0; })) doas.push_back(a);
    }
    std::sort(doas.begin(), doas.end());
    const double snr = s % 2 ? 20.0 : -10.0;
    const auto est = root_music(true_covariance(geom, SourceScene::with_snr(doas, snr)), k, geom);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(est.angles_deg[i], doas[i], 1e-6) << "scene " << s;
  }
}

TEST(RootMusic, InnerRootsKeepOnePerReciprocalPair) {
  const std::vector<Complex> roots{{0.5, 0.0}, {2.0, 0.0}, std::polar(1.0 + 1e-10, 0.3), std::polar(1.0 + 2e-10, 0.3 + 1e-9)};
  const auto inner = inner_roots(roots);
  ASSERT_EQ(inner.size(), 2u);
  EXPECT_NEAR(std::abs(inner[0]), 0.5, 1e-15);
  EXPECT_LE(std::abs(inner[1]), 1.0);
  EXPECT_NEAR(std::arg(inner[1]), 0.3, 1e-8);
}

TEST(RootMusic, RejectsSpacingAboveHalfWavelength) {
  const UlaGeometry geom{8, 0.6};
  EXPECT_THROW(root_music(ComplexMatrix::Identity(8, 8), 1, geom), DomainError);
}

TEST(PickPeaks, TakesLargestLocalMaxima) {
  const GridSpec grid{3, 1.0};  // -3..3
  const std::vector<double> v{0.0, 5.0, 1.0, 2.0, 9.0, 8.0, 0.0};
  EXPECT_EQ(pick_peaks(v, grid, 2).angles_deg, (std::vector<double>{-2.0, 1.0}));
}

TEST(PickPeaks, TiesGoToSmallerAngle) {
  const GridSpec grid{3, 1.0};
  const std::vector<double> v{1.0, 0.0, 3.0, 0.0, 3.0, 0.0, 1.0};
  EXPECT_EQ(pick_peaks(v, grid, 1).angles_deg, (std::vector<double>{-1.0}));
}

TEST(PickPeaks, FillsShortfallWithLargestRemaining) {
  const GridSpec grid{2, 1.0};
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};  // single peak at the edge
  EXPECT_EQ(pick_peaks(v, grid, 3).angles_deg, (std::vector<double>{0.0, 1.0, 2.0}));
}

TEST(PickPeaks, FlatSpectrumStillReturnsK) {
  const GridSpec grid{5, 1.0};
  const std::vector<double> v(11, 1.0);
  const auto est = pick_peaks(v, grid, 4);
  EXPECT_EQ(est.size(), 4u);
  EXPECT_TRUE(std::is_sorted(est.angles_deg.begin(), est.angles_deg.end()));
  EXPECT_EQ(est.angles_deg.front(), -5.0);
}

TEST(DimensionalityReduction, PreservesGramMatrix) {
  const UlaGeometry geom{6, 0.5};
  const auto block = simulate_snapshots(geom, SourceScene::with_snr({-5.0, 20.0}, 0.0), 300, 3);
  const ComplexMatrix y_dr = dimensionality_reduce(block);
  EXPECT_EQ(y_dr.rows(), 6);
  EXPECT_EQ(y_dr.cols(), 6);
  EXPECT_LT((y_dr * y_dr.adjoint() - block.data * block.data.adjoint()).norm(), 1e-9 * block.data.squaredNorm());
}

TEST(L21Svd, NoiselessSingleOnGridSourceIsRecoveredOnItsGridIndex) {
  const UlaGeometry geom{8, 0.5};
  const GridSpec grid{30, 1.0};
  SourceScene scene;
  scene.doas_deg = {7.0};
  scene.source_powers = {1.0};
  scene.noise_power = 0.0;
  const auto block = simulate_snapshots(geom, scene, 40, 2);
  BpdnConfig cfg;
  cfg.eta = 0.0;
  cfg.max_iterations = 5000;
  const auto res = l21_svd(block, grid, geom, cfg, 1);
  EXPECT_EQ(res.estimates.angles_deg, (std::vector<double>{7.0}));
  const auto idx = *grid.index_of(7.0);
  double others = 0.0;
  for (std::size_t i = 0; i < res.row_power.size(); ++i) {
    if (i != idx) others += res.row_power[i];
  }
  EXPECT_LT(others, 1e-3 * res.row_power[idx]);
}

TEST(L21Svd, FeasibleWhenConverged) {
  const UlaGeometry geom{8, 0.5};
  const GridSpec grid{30, 1.0};
  const auto block = simulate_snapshots(geom, SourceScene::with_snr({-6.3, 8.8}, 5.0), 200, 8);
  BpdnConfig cfg;
  cfg.eta = 20.0;
  cfg.max_iterations = 20000;
  const auto res = l21_svd(block, grid, geom, cfg, 2);
  ASSERT_TRUE(res.converged);
  EXPECT_LE(res.residual_norm, cfg.eta * (1.0 + 1e-3));
  ASSERT_EQ(res.estimates.size(), 2u);
  EXPECT_NEAR(res.estimates.angles_deg[0], -6.3, 1.0);
  EXPECT_NEAR(res.estimates.angles_deg[1], 8.8, 1.0);
}

TEST(L21Svd, ObjectiveDoesNotRiseOverTheLastFiftyIterations) {
  const UlaGeometry geom{8, 0.5};
  const GridSpec grid{30, 1.0};
  const auto block = simulate_snapshots(geom, SourceScene::with_snr({-6.3, 8.8}, 0.0), 200, 9);
  BpdnConfig cfg;
  cfg.eta = 40.0;
  const auto res = l21_svd(block, grid, geom, cfg, 2);
  const auto& trace = res.objective_trace;
  ASSERT_GT(trace.size(), 1u);
  // trace[i] is the objective after iteration i + 1
  const std::size_t k = trace.size();
  const std::size_t window_start = std::max<std::size_t>(1, k > 50 ? k - 50 : 1);
  EXPECT_LE(trace.back(), trace[window_start - 1]) << k << " iterations";
}

TEST(L21Svd, LargeEtaIsDegenerate) {
  const UlaGeometry geom{8, 0.5};
  const GridSpec grid{30, 1.0};
  const auto block = simulate_snapshots(geom, SourceScene::with_snr({0.0}, 0.0), 50, 1);
  BpdnConfig cfg;
  cfg.eta = 10.0 * block.data.norm();
  const auto res = l21_svd(block, grid, geom, cfg, 1);
  EXPECT_TRUE(res.degenerate);
  for (double p : res.row_power) EXPECT_EQ(p, 0.0);
}

TEST(L21Svd, RejectsNegativeEta) {
  BpdnConfig cfg;
  cfg.eta = -1.0;
  EXPECT_THROW(cfg.validate(), DomainError);
}
