#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/training.hpp"

using namespace csi_djscc;

namespace {

const CsiDataset& small_dataset() {
  static const CsiDataset d = generate_dataset(ChannelScenario::desk(), 16, 8, 8, 91);
  return d;
}

PipelineConfig adjscc_config() {
  PipelineConfig pc;
  pc.variant = PipelineVariant::adjscc;
  pc.k = 16;
  return pc;
}

PipelineConfig bit_config(std::size_t m) {
  PipelineConfig pc;
  pc.variant = PipelineVariant::sscc_bit;
  pc.transform = nn::TransformKind::truncated_ad;
  pc.m = m;
  return pc;
}

TrainConfig quick(std::size_t epochs, std::size_t batch) {
  TrainConfig tc;
  tc.max_epochs = epochs;
  tc.batch_size = batch;
  tc.seed = 5;
  return tc;
}

std::vector<std::vector<double>> snapshot(nn::Model<double>& m, nn::Group g) {
  std::vector<std::vector<double>> s;
  for (auto* p : m.group(g)) s.emplace_back(p->value.begin(), p->value.end());
  return s;
}

}  // namespace

TEST(SampleSnr, FixedAndUniform) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_snr(SnrPolicy{4.0, 4.0}, rng).value, 4.0);
  const SnrPolicy p{-10.0, 10.0};
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_snr(p, rng).value;
    ASSERT_GE(v, -10.0);
    ASSERT_LE(v, 10.0);
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.05);
  EXPECT_NEAR(s2 / n, 400.0 / 12.0, 0.35);
  EXPECT_THROW((SnrPolicy{3.0, 1.0}.validate()), ConfigError);
}

TEST(Loss, Examples) {
  Tensor<double> h(2, 4, 2, 2), hh(2, 4, 2, 2);
  EXPECT_EQ(loss_e2e(h, hh), 0.0);
  std::fill(hh.v.begin(), hh.v.end(), 1.0);
  EXPECT_DOUBLE_EQ(loss_e2e(h, hh), 8.0);  // 8 elements per sample
  hh.v[0] = 3.0;
  EXPECT_DOUBLE_EQ(loss_e2e(h, hh), 8.0 + 8.0 / 4.0);
  const auto g = batch_loss_grad(hh, h);
  EXPECT_DOUBLE_EQ(g.v[0], 2.0 * 3.0 / 4.0);
  EXPECT_THROW(loss_e2e(h, Tensor<double>(2, 3, 2, 2)), ShapeError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::Param<double> p("p", 3);
  p.value = {1.0, -2.0, 0.5};
  p.grad = {0.3, -4.0, 1e-2};
  Adam<double> opt({&p}, 1e-2);
  opt.step();
  // epsilon sits on sqrt(v) before bias correction, so the first step is
  // lr * g / (|g| + eps / sqrt(1 - beta2)).
  auto step = [](double g) { return 1e-2 * g / (std::abs(g) + 1e-7 / std::sqrt(1.0 - 0.999)); };
  EXPECT_NEAR(p.value[0], 1.0 - step(0.3), 1e-12);
  EXPECT_NEAR(p.value[1], -2.0 - step(-4.0), 1e-12);
  EXPECT_NEAR(p.value[2], 0.5 - step(1e-2), 1e-12);
  EXPECT_NEAR(p.value[0], 1.0 - 1e-2, 1e-6);
}

TEST(Fit, LearningRateHalvesOnPlateauDownToFloor) {
  nn::Model<double> m(nn::ModelSpec{}, 1);
  Phase<double> ph;
  ph.label = "flat";
  ph.params = {};
  ph.step = [](std::span<const std::size_t>, std::mt19937_64&) { return 1.0; };
  ph.validate = [] { return 1.0; };
  TrainConfig tc = quick(6, 4);
  tc.lr_init = 1e-3;
  tc.lr_floor = 2e-4;
  tc.plateau_patience_epochs = 1;
  const auto rep = fit(m, ph, 8, tc);
  ASSERT_EQ(rep.epochs.size(), 6u);
  const double want[] = {1e-3, 5e-4, 2.5e-4, 2e-4, 2e-4, 2e-4};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(rep.epochs[i].lr, want[i]);
  EXPECT_EQ(rep.best_epoch, 0u);
}

TEST(Fit, KeepsBestValidationCheckpoint) {
  nn::Model<double> m(nn::ModelSpec{}, 2);
  auto params = m.trainable(nn::kAllGroups);
  const std::vector<double> vals{5, 4, 3, 6, 7};
  std::size_t call = 0;
  std::vector<std::string> hashes;
  Phase<double> ph;
  ph.label = "ckpt";
  ph.params = params;
  ph.step = [&](std::span<const std::size_t>, std::mt19937_64&) {
    for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 1.0);
    return 1.0;
  };
  ph.validate = [&] {
    hashes.push_back(nn::parameter_hash(m));
    return vals[call++];
  };
  nn::Model<double> last;
  const auto rep = fit(m, ph, 4, quick(4, 4), nullptr, &last);
  EXPECT_EQ(rep.best_epoch, 2u);
  EXPECT_EQ(rep.initial_val_loss, 5.0);
  EXPECT_EQ(nn::parameter_hash(m), hashes[2]);
  EXPECT_EQ(nn::parameter_hash(last), hashes[4]);
  EXPECT_EQ(rep.epochs.back().best_val_loss, 3.0);
}

TEST(Fit, NonFiniteLossIsReported) {
  nn::Model<double> m(nn::ModelSpec{}, 3);
  Phase<double> ph;
  ph.label = "nan";
  ph.step = [](std::span<const std::size_t>, std::mt19937_64&) { return std::nan(""); };
  ph.validate = [] { return 1.0; };
  EXPECT_THROW(fit(m, ph, 4, quick(2, 2)), DivergenceError);
  ph.validate = [] { return std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(fit(m, ph, 4, quick(2, 2)), DivergenceError);
}

TEST(Train, TwoEpochsOnSmallSet) {
  const auto& d = small_dataset();
  const auto pc = adjscc_config();
  nn::Model<float> m(pc.model_spec(d.scenario()), 4);
  const auto out = train(m, d, pc, quick(2, 5), nullptr, "two");
  ASSERT_EQ(out.report.epochs.size(), 2u);
  for (const auto& e : out.report.epochs) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    EXPECT_TRUE(std::isfinite(e.val_loss));
  }
  EXPECT_EQ(out.report.label, "two");
  EXPECT_TRUE(m.all_finite());
  double best = out.report.initial_val_loss;
  for (const auto& e : out.report.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(out.report.epochs.back().best_val_loss, best);
}

TEST(Train, OverfitsEightSamples) {
  const auto d = generate_dataset(ChannelScenario::desk(), 8, 4, 4, 92);
  auto pc = adjscc_config();
  auto tc = quick(50, 1);
  tc.snr_range_db = {20.0, 20.0};
  nn::Model<float> m(pc.model_spec(d.scenario()), 6);
  const auto out = train(m, d, pc, tc);
  const double first = out.report.epochs.front().train_loss;
  const double last = out.report.epochs.back().train_loss;
  EXPECT_LT(last, 0.1 * first) << "first " << first << " last " << last;
}

TEST(Train, Deterministic) {
  const auto& d = small_dataset();
  const auto pc = adjscc_config();
  nn::Model<float> a(pc.model_spec(d.scenario()), 7), b(pc.model_spec(d.scenario()), 7);
  auto ra = train(a, d, pc, quick(2, 6));
  auto rb = train(b, d, pc, quick(2, 6));
  EXPECT_EQ(nn::parameter_hash(a), nn::parameter_hash(b));
  EXPECT_EQ(nn::parameter_hash(ra.last), nn::parameter_hash(rb.last));
  EXPECT_EQ(ra.report.epochs.back().val_loss, rb.report.epochs.back().val_loss);
}

TEST(TrainBitLevel, FrozenEncoderAndMonotoneSteps) {
  const auto& d = small_dataset();
  const auto pc = bit_config(6);
  nn::Model<double> m(pc.model_spec(d.scenario()), 8);
  const auto theta0 = snapshot(m, nn::Group::theta);
  const auto rep = train_bitlevel(m, d, pc, quick(0, 8), BitLevelBudget{0, 3, 3});
  EXPECT_EQ(snapshot(m, nn::Group::theta), theta0);  // steps 2 and 3 never touch the encoder
  EXPECT_LE(rep.offset_val_mse_after, rep.offset_val_mse_before);
  EXPECT_LE(rep.step3_val_nmse, rep.step2_val_nmse);
  EXPECT_EQ(rep.step2.epochs.size(), 3u);
  EXPECT_EQ(rep.step3.epochs.size(), 3u);

  nn::Model<double> m2(pc.model_spec(d.scenario()), 8);
  train_bitlevel(m2, d, pc, quick(0, 8), BitLevelBudget{2, 1, 1});
  EXPECT_NE(snapshot(m2, nn::Group::theta), theta0);
}

TEST(TrainBitLevel, RejectsWrongVariant) {
  const auto& d = small_dataset();
  const auto pc = adjscc_config();
  nn::Model<double> m(pc.model_spec(d.scenario()), 9);
  EXPECT_THROW(train_bitlevel(m, d, pc, quick(1, 8), BitLevelBudget{1, 1, 1}), ConfigError);
  auto bad = quick(1, 8);
  bad.lr_floor = 1.0;
  EXPECT_THROW(train(m, d, pc, bad), ConfigError);
}
