#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "csi_djscc/quantization.hpp"

using namespace csi_djscc;

namespace {

double roundtrip(double x, const QuantizerSpec& q) {
  const double v[] = {x};
  const auto idx = quantize(v, q);
  return dequantize(idx, q)[0];
}

// Nearest level in the companded domain, found by scanning every level.
std::size_t brute_index(double x, const QuantizerSpec& q) {
  const double y = compand(std::clamp(x, -1.0, 1.0), q.companding_mu);
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < q.levels(); ++j) {
    const double yj = -1.0 + static_cast<double>(j) * q.step();
    const double d = std::abs(y - yj);
    if (d < bd - 1e-12) bd = d, best = j;
  }
  return best;
}

}  // namespace

TEST(Quantizer, LevelsAndEndpoints) {
  for (int b = 2; b <= 8; ++b) {
    const QuantizerSpec q{b, 255.0};
    EXPECT_EQ(q.levels(), (std::size_t{1} << b) - 1);
    EXPECT_EQ(roundtrip(0.0, q), 0.0);
    EXPECT_EQ(roundtrip(1.0, q), 1.0);
    EXPECT_EQ(roundtrip(-1.0, q), -1.0);
    EXPECT_EQ(roundtrip(3.0, q), 1.0);
    EXPECT_EQ(roundtrip(-7.5, q), -1.0);
  }
}

TEST(Quantizer, CompandingInverse) {
  for (double x = -1.0; x <= 1.0; x += 0.013) EXPECT_NEAR(expand(compand(x, 255.0), 255.0), x, 1e-13);
  EXPECT_NEAR(compand(1.0, 255.0), 1.0, 1e-15);
  EXPECT_GT(compand(0.01, 255.0), 0.2);  // small values get finer cells
}

TEST(Quantizer, MatchesNearestLevelSearch) {
  const QuantizerSpec q{4, 255.0};
  const double v[] = {0.5};
  EXPECT_EQ(quantize(v, q)[0], brute_index(0.5, q));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int b = 2; b <= 6; ++b) {
    const QuantizerSpec qb{b, 255.0};
    for (int i = 0; i < 2000; ++i) {
      const double x = u(rng);
      const double xs[] = {x};
      EXPECT_EQ(quantize(xs, qb)[0], brute_index(x, qb)) << "B=" << b << " x=" << x;
    }
  }
}

TEST(Quantizer, ExhaustiveCellBound) {
  for (int b = 2; b <= 6; ++b) {
    const QuantizerSpec q{b, 255.0};
    std::size_t violations = 0;
    for (long i = -10000; i <= 10000; ++i) {
      const double x = static_cast<double>(i) * 1e-4;
      if (std::abs(roundtrip(x, q) - x) > cell_error_bound(x, q) + 1e-15) ++violations;
    }
    EXPECT_EQ(violations, 0u) << "B=" << b;
  }
}

TEST(Quantizer, LevelCentersAreFixedPoints) {
  for (int b = 2; b <= 8; ++b) {
    const QuantizerSpec q{b, 255.0};
    for (std::size_t j = 0; j < q.levels(); ++j) {
      const double c = level_value(j, q);
      const double xs[] = {c};
      EXPECT_EQ(quantize(xs, q)[0], j);
      EXPECT_EQ(roundtrip(c, q), c);
    }
  }
}

TEST(Quantizer, Validation) {
  const double v[] = {0.0};
  EXPECT_THROW(quantize(v, QuantizerSpec{1, 255.0}), ConfigError);
  EXPECT_THROW(quantize(v, QuantizerSpec{9, 255.0}), ConfigError);
  EXPECT_THROW(quantize(v, QuantizerSpec{5, 0.0}), ConfigError);
  const std::uint8_t bad[] = {31};
  EXPECT_THROW(dequantize(bad, QuantizerSpec{5, 255.0}), ShapeError);
}

TEST(IdealScheme, CapacityValues) {
  EXPECT_NEAR(capacity(SnrDb{0.0}), 1.0, 1e-12);
  EXPECT_NEAR(capacity(SnrDb{10.0}), std::log2(11.0), 1e-12);
  EXPECT_NEAR(capacity(SnrDb{-10.0}), std::log2(1.1), 1e-12);
  const double g[] = {1.0, 1.0};
  EXPECT_NEAR(ergodic_capacity(SnrDb{0.0}, g), 1.0, 1e-12);
}

TEST(IdealScheme, DimensionArithmetic) {
  EXPECT_EQ(ideal_dimension(32, SnrDb{0.0}, 5), 7u);    // ceil(32/5)
  EXPECT_EQ(ideal_dimension(32, SnrDb{10.0}, 5), 23u);  // ceil(32*log2(11)/5)
  EXPECT_EQ(ideal_dimension(16, SnrDb{0.0}, 5), 4u);
  EXPECT_EQ(ideal_dimension(16, SnrDb{10.0}, 5), 12u);
  EXPECT_EQ(ideal_dimension(16, SnrDb{-10.0}, 5), 1u);
  EXPECT_EQ(ideal_dimension(10, SnrDb{0.0}, 5), 2u);  // exact integer stays put
  for (double mu = -10; mu < 20; mu += 0.5)
    EXPECT_LE(ideal_dimension(16, SnrDb{mu}, 5), ideal_dimension(16, SnrDb{mu + 0.5}, 5));
  for (std::size_t k = 1; k < 64; ++k)
    for (double mu : {-10.0, -3.0, 0.0, 4.0, 10.0}) {
      const double v = static_cast<double>(k) * std::log2(1.0 + std::pow(10.0, mu / 10.0)) / 5.0;
      EXPECT_EQ(ideal_dimension(k, SnrDb{mu}, 5), std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(v - 1e-9))));
    }
  EXPECT_THROW(ideal_dimension(0, SnrDb{0.0}, 5), ConfigError);
}

TEST(IdealScheme, ThresholdCurve) {
  const IdealSchemeSpec s{16, 5, 0.0};
  AutoencoderTable table{{4, -7.5}};
  const std::vector<double> grid{-10, -5, -1, 0, 5, 10};
  const auto c = sscc_ideal_curve(s, grid, table);
  EXPECT_EQ(c.label, "SSCC-ideal@0dB");
  EXPECT_EQ(c.nmse_db, (std::vector<double>{0, 0, 0, -7.5, -7.5, -7.5}));
  EXPECT_EQ(c.provenance["m"], 4);
  const AutoencoderTable empty;
  EXPECT_THROW(sscc_ideal_curve(s, grid, empty), ContractError);
}

TEST(IdealScheme, EnvelopeIsPointwiseMinimum) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(-5.0, 4.0);
  const std::vector<double> grid{-10, -5, 0, 5, 10};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SweepResult> set(1 + trial % 5);
    for (std::size_t i = 0; i < set.size(); ++i) {
      set[i].label = "c" + std::to_string(i);
      set[i].snr_grid_db = grid;
      for (std::size_t p = 0; p < grid.size(); ++p) set[i].nmse_db.push_back(g(rng));
    }
    const auto e = envelope(set, "env");
    for (std::size_t p = 0; p < grid.size(); ++p) {
      double m = set[0].nmse_db[p];
      for (const auto& c : set) m = c.nmse_db[p] < m ? c.nmse_db[p] : m;
      EXPECT_EQ(e.nmse_db[p], m);
    }
    EXPECT_EQ(e.provenance["envelope_of"].size(), set.size());
  }
  std::vector<SweepResult> bad(2);
  bad[0].snr_grid_db = {0, 1};
  bad[0].nmse_db = {0, 0};
  bad[1].snr_grid_db = {0, 2};
  bad[1].nmse_db = {0, 0};
  EXPECT_THROW(envelope(bad), ShapeError);
  EXPECT_THROW(envelope(std::span<const SweepResult>{}), ContractError);
}
