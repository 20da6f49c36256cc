#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/evaluation.hpp"
#include "csi_djscc/report.hpp"
#include "test_util.hpp"

using namespace csi_djscc;
namespace fs = std::filesystem;

namespace {

const CsiDataset& small_dataset() {
  static const CsiDataset d = generate_dataset(ChannelScenario::desk(), 12, 6, 10, 31);
  return d;
}

SweepResult curve(std::vector<double> grid, std::vector<double> nmse, std::string label = "c") {
  SweepResult r;
  r.label = std::move(label);
  r.snr_grid_db = std::move(grid);
  r.nmse_db = std::move(nmse);
  return r;
}

}  // namespace

TEST(Nmse, Examples) {
  std::mt19937_64 rng(1);
  const auto h = csi_djscc::testing::random_matrix(4, 3, rng);
  EXPECT_EQ(nmse(h, h), -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(nmse(h, ComplexMatrix(4, 3)), 0.0, 1e-12);
  ComplexMatrix h9 = h;
  for (auto& v : h9.data()) v *= 0.9;
  EXPECT_NEAR(nmse(h, h9), -20.0, 1e-9);
  EXPECT_THROW(nmse(ComplexMatrix(4, 3), h), DegenerateError);
  EXPECT_THROW(nmse(h, ComplexMatrix(3, 3)), ShapeError);
}

TEST(Nmse, SetAveragingModes) {
  ComplexMatrix a(1, 1), b(1, 1), ah(1, 1), bh(1, 1);
  a(0, 0) = 1.0;
  b(0, 0) = 3.0;
  ah(0, 0) = 0.0;  // ratio 1
  bh(0, 0) = 3.0;  // ratio 0
  const std::vector<ComplexMatrix> h{a, b}, hh{ah, bh};
  EXPECT_NEAR(nmse(h, hh, NmseAveraging::mean_of_ratios), 10 * std::log10(0.5), 1e-12);
  EXPECT_NEAR(nmse(h, hh, NmseAveraging::ratio_of_means), 10 * std::log10(0.1), 1e-12);
  EXPECT_THROW(NmseAccumulator().db(), ContractError);
}

TEST(Cliff, MatchesPairwiseScan) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(-5, 3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + t % 20;
    SweepResult r;
    for (std::size_t i = 0; i < n; ++i) {
      r.snr_grid_db.push_back(static_cast<double>(i));
      r.nmse_db.push_back(g(rng));
    }
    double ref = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) ref = std::max(ref, std::abs(r.nmse_db[i + 1] - r.nmse_db[i]));
    EXPECT_EQ(cliff_metric(r), ref);
  }
  EXPECT_EQ(cliff_metric(curve({0, 1, 2}, {0, -6, -6})), 6.0);
  EXPECT_THROW(cliff_metric(curve({0}, {0})), ContractError);
}

TEST(Grid, Construction) {
  EXPECT_EQ(make_grid(-10, 10, 1).size(), 21u);
  EXPECT_EQ(make_grid(-10, 10, 10), (std::vector<double>{-10, 0, 10}));
  EXPECT_EQ(make_grid(3, 3, 1), (std::vector<double>{3}));
  EXPECT_THROW(make_grid(1, 0, 1), ConfigError);
  EXPECT_THROW(make_grid(0, 1, 0), ConfigError);
}

TEST(Sweep, DeterministicAndSinglePoint) {
  const auto& d = small_dataset();
  PipelineConfig pc;
  pc.variant = PipelineVariant::adjscc;
  nn::Model<float> m(pc.model_spec(d.scenario()), 3);
  SweepOptions opt;
  const std::vector<double> grid{-10, 0, 10};
  const auto a = snr_sweep(m, d, pc, grid, opt, "a");
  const auto b = snr_sweep(m, d, pc, grid, opt, "a");
  EXPECT_EQ(a.nmse_db, b.nmse_db);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_EQ(a.provenance["samples"], 10);
  const std::vector<double> one{-10};
  const auto s = snr_sweep(m, d, pc, one, opt);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.nmse_db[0], a.nmse_db[0]);
}

TEST(Sweep, NoiselessPointAndSubsets) {
  const auto& d = small_dataset();
  PipelineConfig pc;
  pc.variant = PipelineVariant::djscc;
  nn::Model<float> m(pc.model_spec(d.scenario()), 4);
  SweepOptions opt;
  opt.max_samples = 4;
  const std::vector<double> grid{0, std::numeric_limits<double>::infinity()};
  const auto r = snr_sweep(m, d, pc, grid, opt);
  EXPECT_TRUE(std::isfinite(r.nmse_db[1]));
  EXPECT_EQ(r.provenance["samples"], 4);
  // One-sample forward agrees with the batched sweep path.
  const auto rec = djscc_reconstruct(m, d, pc, 0.0, opt, derive_seed(opt.seed, 0));
  const auto one = djscc_forward(m, d.manifest(), pc, d.h_down(Split::test, 2), d.h_up(Split::test, 2), SnrDb{0.0},
                                 derive_seed(derive_seed(opt.seed, 0), 2));
  for (std::size_t e = 0; e < one.size(); ++e) EXPECT_NEAR(std::abs(one.data()[e] - rec[2].data()[e]), 0.0, 1e-5);
}

TEST(Sweep, AdaptiveModelRespondsToSnr) {
  const auto& d = small_dataset();
  PipelineConfig pc;
  pc.variant = PipelineVariant::adjscc;
  nn::Model<float> m(pc.model_spec(d.scenario()), 5);
  SweepOptions opt;
  EXPECT_GT(snr_sensitivity(m, d, pc, 0.0, 5.0, opt), 0.5);
  pc.variant = PipelineVariant::djscc;
  nn::Model<float> f(pc.model_spec(d.scenario()), 5);
  EXPECT_EQ(snr_sensitivity(f, d, pc, 0.0, 5.0, opt), 0.0);
}

TEST(Report, RoundTripAndFiles) {
  ResultsFile r;
  r.provenance = {{"config_hash", "abc"}, {"dataset_hash", "def"}};
  auto c1 = curve({-10, 0, 10}, {-1, -5, -9}, "A");
  c1.family = "validity";
  auto c2 = curve({-10, 0, 10}, {0, 0, -std::numeric_limits<double>::infinity()}, "B");
  c2.family = "validity";
  r.curves = {c1, c2};
  r.metrics["cliff_db"]["A"] = 4.0;
  const auto dir = csi_djscc::testing::scratch_dir("report");
  const auto files = make_report(r, dir);
  EXPECT_EQ(files.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "validity.svg"));
  EXPECT_TRUE(fs::exists(dir / "report.md"));
  const auto back = load_results(dir / "results.json");
  ASSERT_EQ(back.curves.size(), 2u);
  EXPECT_EQ(back.curves[1].nmse_db, c2.nmse_db);
  EXPECT_EQ(back.curves[0].label, "A");
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.provenance, r.provenance);
}

TEST(Report, Errors) {
  const auto dir = csi_djscc::testing::scratch_dir("err");
  EXPECT_THROW(make_report(ResultsFile{}, dir), ContractError);
  ResultsFile bad;
  bad.curves = {curve({0, 0}, {1, 2})};
  EXPECT_THROW(make_report(bad, dir), ContractError);
  csi_djscc::detail::write_text(dir / "v.json", R"({"version": "csi-djscc-results/0", "curves": []})");
  EXPECT_THROW(load_results(dir / "v.json"), VersionError);
  csi_djscc::detail::write_text(dir / "n.json", R"({"curves": []})");
  EXPECT_THROW(load_results(dir / "n.json"), FormatError);
}
