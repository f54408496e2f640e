#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "doa/crlb.hpp"
#include "oracles.hpp"

using namespace doa;

TEST(Crlb, ScalesAsInverseRootSnapshots) {
  const UlaGeometry geom{16, 0.5};
  const auto scene = SourceScene::with_snr({10.11, 13.3}, 0.0);
  const auto a = crlb_unconditional(geom, scene, 1000);
  const auto b = crlb_unconditional(geom, scene, 4000);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i] / a[i], 0.5, 1e-6);
}

TEST(Crlb, DecreasesWithSnr) {
  const UlaGeometry geom{8, 0.5};
  double previous = std::numeric_limits<double>::infinity();
  for (int snr = -10; snr <= 35; snr += 5) {
    const double bound = crlb_unconditional(geom, SourceScene::with_snr({12.0}, snr), 1000)[0];
    EXPECT_LT(bound, previous) << snr << " dB";
    previous = bound;
  }
}

TEST(Crlb, MatchesFiniteDifferenceFisherSingleSource) {
  const UlaGeometry geom{8, 0.5};
  for (double snr : {-10.0, 0.0, 10.0}) {
    const auto scene = SourceScene::with_snr({-17.3}, snr);
    const auto closed = crlb_unconditional(geom, scene, 500);
    const auto fisher = oracle::fisher_crlb_deg(geom, scene, 500);
    EXPECT_NEAR(closed[0] / fisher[0], 1.0, 0.01) << snr << " dB";
  }
}

TEST(Crlb, MatchesFiniteDifferenceFisherTwoSources) {
  const UlaGeometry geom{8, 0.5};
  SourceScene scene{{-5.0, 9.0}, {0.7, 1.25}, 0.5};
  const auto closed = crlb_unconditional(geom, scene, 1000);
  const auto fisher = oracle::fisher_crlb_deg(geom, scene, 1000);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(closed[i] / fisher[i], 1.0, 0.01);
}

TEST(Crlb, RmsCombinesSources) {
  const UlaGeometry geom{8, 0.5};
  const auto scene = SourceScene::with_snr({-5.0, 9.0}, 0.0);
  const auto b = crlb_unconditional(geom, scene, 1000);
  EXPECT_NEAR(crlb_rms(geom, scene, 1000), std::sqrt((b[0] * b[0] + b[1] * b[1]) / 2.0), 1e-12);
}

TEST(Crlb, CoincidentSourcesAreSingular) {
  EXPECT_THROW(crlb_unconditional({8, 0.5}, SourceScene::with_snr({3.0, 3.0}, 0.0), 1000), NumericalError);
}

TEST(Crlb, InvalidInputsAreRejected) {
  EXPECT_THROW(crlb_unconditional({4, 0.5}, SourceScene::with_snr({1.0, 20.0, 40.0, -30.0}, 0.0), 100), DomainError);
  EXPECT_THROW(crlb_unconditional({8, 0.5}, SourceScene::with_snr({1.0, 20.0}, 0.0), 2), DomainError);
}
