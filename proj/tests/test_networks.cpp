#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/nn/networks.hpp"
#include "test_util.hpp"

using namespace csi_djscc;
using namespace csi_djscc::nn;
namespace fs = std::filesystem;

namespace {

Tensor<double> random_tensor(std::size_t c, std::size_t n, std::size_t h, std::size_t w, std::mt19937_64& rng,
                             double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(c, n, h, w);
  for (auto& v : t.v) v = u(rng);
  return t;
}

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw) {
  return cout * cin * kh * kw + cout;
}
std::size_t af_count(std::size_t c) { return 2 * c * c + 3 * c; }
// conv + BN(gamma, beta), leaky activation has no parameters
std::size_t stage_count(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw) {
  return conv_count(cin, cout, kh, kw) + 2 * cout;
}

struct Expected {
  std::size_t enc_main, enc_af, dec_main, dec_af;
};

Expected expected_counts(Backbone b) {
  switch (b) {
    case Backbone::csinet:
      return {stage_count(2, 2, 3, 3), af_count(2),
              2 * (stage_count(2, 8, 3, 3) + stage_count(8, 16, 3, 3) + conv_count(16, 2, 1, 1)),
              2 * (af_count(8) + af_count(16))};
    case Backbone::csinet_plus:
      return {2 * stage_count(2, 2, 7, 7), 2 * af_count(2),
              2 * (stage_count(2, 8, 7, 7) + stage_count(8, 16, 7, 7) + conv_count(16, 2, 1, 1)),
              2 * (af_count(8) + af_count(16))};
    case Backbone::crnet:
      return {2 * stage_count(2, 2, 3, 3) + stage_count(2, 2, 1, 9) + stage_count(2, 2, 9, 1) + stage_count(4, 2, 1, 1),
              5 * af_count(2),
              2 * (stage_count(2, 8, 3, 3) + stage_count(2, 8, 1, 9) + stage_count(8, 8, 9, 1) + conv_count(16, 2, 1, 1)),
              2 * 3 * af_count(8)};
  }
  return {};
}

}  // namespace

TEST(TransformStrides, Factors) {
  EXPECT_EQ(transform_strides(64, 16), (std::vector<std::size_t>{2, 2, 1}));
  EXPECT_EQ(transform_strides(256, 32), (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(transform_strides(32, 32), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_THROW(transform_strides(64, 24), ConfigError);
  EXPECT_THROW(transform_strides(48, 16), ConfigError);
  EXPECT_THROW(transform_strides(256, 16), ConfigError);
}

TEST(ParamCounts, ClosedFormKnownValues) {
  EXPECT_EQ(expected_counts(Backbone::csinet).enc_main, 42u);
  EXPECT_EQ(expected_counts(Backbone::csinet).dec_main, 2804u);
  EXPECT_EQ(expected_counts(Backbone::csinet_plus).enc_main, 404u);
  EXPECT_EQ(expected_counts(Backbone::csinet_plus).dec_main, 14324u);
  EXPECT_EQ(expected_counts(Backbone::crnet).enc_main, 182u);
  EXPECT_EQ(expected_counts(Backbone::crnet).dec_main, 1940u);
  EXPECT_EQ(expected_counts(Backbone::crnet).dec_af, 912u);
}

TEST(ParamCounts, MatchClosedForm) {
  for (Backbone b : {Backbone::csinet, Backbone::csinet_plus, Backbone::crnet})
    for (std::size_t m : {32u, 64u})
      for (bool full : {false, true}) {
        SCOPED_TRACE(std::string(backbone_name(b)) + " m=" + std::to_string(m) + (full ? " full" : " desk"));
        ModelSpec s;
        s.backbone = b;
        s.m = m;
        if (full) s.n_sub = 256, s.n_trunc = 32, s.n_tx = 32;
        Model<float> model(s, 3);
        const std::size_t feat = 2 * s.n_trunc * s.n_tx;
        const auto e = expected_counts(b);
        const std::size_t atn_main = stage_count(2, 32, 3, 3) + 32 + stage_count(32, 32, 3, 3) + 32 + conv_count(32, 2, 3, 3);
        EXPECT_EQ(atn_main, 10626u);
        EXPECT_EQ(model.group_count(Group::alpha), atn_main);
        EXPECT_EQ(model.group_count(Group::beta), atn_main);
        EXPECT_EQ(model.group_count(Group::gamma), 2 * af_count(32));
        EXPECT_EQ(model.group_count(Group::tau), 4288u);
        EXPECT_EQ(model.group_count(Group::theta), e.enc_main + feat * m + m);
        EXPECT_EQ(model.group_count(Group::psi), e.enc_af);
        EXPECT_EQ(model.group_count(Group::phi), e.dec_main + m * feat + feat);
        EXPECT_EQ(model.group_count(Group::rho), e.dec_af);
        EXPECT_EQ(model.count_params(Side::ue), 10626u + 4288u + e.enc_main + e.enc_af + feat * m + m);
        EXPECT_EQ(model.count_params(Side::bs), 10626u + 4288u + e.dec_main + e.dec_af + m * feat + feat);
        EXPECT_EQ(model.count_params(Side::ue) + model.count_params(Side::bs), model.count_params());
      }
}

TEST(ParamCounts, ProjectionSizesAtFullProfile) {
  std::mt19937_64 rng(1);
  BackboneSpec s{Backbone::csinet, 64, 32, 32, true, 0, Act::none};
  Encoder<float> enc(s, rng);
  Decoder<float> dec(s, rng);
  EXPECT_EQ(enc.projection().weight().size() + enc.projection().bias().size(), 131136u);
  EXPECT_EQ(dec.projection().weight().size() + dec.projection().bias().size(), 133120u);
}

TEST(ParamCounts, VariantsWithoutTransformsOrAdaptation) {
  ModelSpec s;
  s.transform = TransformKind::truncated_ad;
  s.adaptive = false;
  Model<float> m(s, 1);
  const std::size_t feat = 2 * s.n_trunc * s.n_tx;
  EXPECT_EQ(m.group_count(Group::alpha), 0u);
  EXPECT_EQ(m.group_count(Group::gamma), 0u);
  EXPECT_EQ(m.group_count(Group::psi), 0u);
  EXPECT_EQ(m.count_params(), 42 + feat * s.m + s.m + 2804 + s.m * feat + feat);
  s.offset_net = true;
  Model<float> mo(s, 1);
  EXPECT_EQ(mo.group_count(Group::phi), m.group_count(Group::phi) + 2 * (s.m * s.m + s.m));
}

TEST(TransformNets, ShapesAndRange) {
  std::mt19937_64 rng(2);
  TransformNetSpec s{64, 16, 16, 32, 32, 3, true, 0};
  AnalysisTransform<double> atn(s, rng);
  SynthesisTransform<double> stn(s, rng);
  const auto x = random_tensor(2, 3, 64, 16, rng);
  const std::vector<double> snr{-10, 0, 10};
  const auto z = atn.forward(x, snr, true);
  EXPECT_EQ(z.c, 2u);
  EXPECT_EQ(z.n, 3u);
  EXPECT_EQ(z.h, 16u);
  EXPECT_EQ(z.w, 16u);
  for (double v : z.v) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto y = stn.forward(z, snr, true);
  EXPECT_TRUE(y.same_shape(x));
  for (double v : y.v) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(atn.forward(random_tensor(2, 1, 32, 16, rng), std::span<const double>(snr.data(), 1), false), ShapeError);
}

TEST(TransformNets, ZeroInputGivesHalf) {
  std::mt19937_64 rng(3);
  TransformNetSpec s{64, 16, 16, 8, 8, 3, true, 0};
  AnalysisTransform<double> atn(s, rng);
  const Tensor<double> x(2, 2, 64, 16);
  const std::vector<double> snr{-4, 7};
  for (double v : atn.forward(x, snr, false).v) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Encoder, CodewordLengthAndZeroInput) {
  std::mt19937_64 rng(4);
  for (Backbone b : {Backbone::csinet, Backbone::csinet_plus, Backbone::crnet}) {
    BackboneSpec s{b, 24, 16, 16, true, 0, Act::none};
    Encoder<double> enc(s, rng);
    const std::vector<double> snr{0, 5};
    // Before any training-mode pass, so BN running stats are still (0, 1).
    for (double v : enc.forward(Tensor<double>(2, 2, 16, 16), snr, false).v) EXPECT_EQ(v, 0.0);
    const auto c = enc.forward(random_tensor(2, 2, 16, 16, rng), snr, true);
    EXPECT_EQ(c.c, 24u);
    EXPECT_EQ(c.n, 2u);
    EXPECT_EQ(c.h * c.w, 1u);
  }
}

TEST(Decoder, FreshDecoderIsSigmoidOfProjection) {
  std::mt19937_64 rng(5);
  for (Backbone b : {Backbone::csinet, Backbone::csinet_plus, Backbone::crnet}) {
    BackboneSpec s{b, 12, 8, 4, true, 0, Act::none};
    Decoder<double> dec(s, rng);
    auto c = random_tensor(12, 3, 1, 1, rng, -1, 1);
    const std::vector<double> snr{-10, 0, 10};
    const auto y = dec.forward(c, snr, true);
    ASSERT_EQ(y.c, 2u);
    ASSERT_EQ(y.h, 8u);
    ASSERT_EQ(y.w, 4u);
    auto& fc = dec.projection();
    for (std::size_t ch = 0; ch < 2; ++ch)
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t p = 0; p < 32; ++p) {
          const std::size_t f = ch * 32 + p;
          double s = fc.bias().value[f];
          for (std::size_t i = 0; i < 12; ++i) s += fc.weight().value[f * 12 + i] * c.v[i * 3 + n];
          EXPECT_NEAR(y.v[(ch * 3 + n) * 32 + p], 1.0 / (1.0 + std::exp(-s)), 1e-12);
        }
    EXPECT_THROW(dec.forward(random_tensor(11, 1, 1, 1, rng), std::span<const double>(snr.data(), 1), false), ShapeError);
  }
}

TEST(OffsetNet, StartsAsIdentity) {
  std::mt19937_64 rng(6);
  OffsetNet<double> net(7, rng);
  const auto x = random_tensor(7, 4, 1, 1, rng);
  EXPECT_EQ(net.forward(x).v, x.v);
}

TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
  ModelSpec s;
  s.backbone = Backbone::crnet;
  s.m = 8;
  s.n_sub = 16;
  s.n_trunc = 8;
  s.n_tx = 4;
  s.atn_width1 = 4;
  s.atn_width2 = 4;
  s.offset_net = false;
  Model<double> model(s, 7);
  std::mt19937_64 rng(8);
  const auto x = random_tensor(2, 3, 16, 4, rng);
  const std::vector<double> snr{-6, 1, 8};
  const auto w = random_tensor(2, 3, 16, 4, rng, -1, 1);
  auto loss = [&] {
    const auto y = model.decode(model.encode(x, snr, true), snr, true);
    double l = 0;
    for (std::size_t i = 0; i < y.v.size(); ++i) l += w.v[i] * y.v[i];
    return l;
  };
  model.zero_grad();
  loss();
  const auto dc = model.decode_backward(w);
  model.encode_backward(dc);
  std::size_t checked = 0;
  for (Group g : kAllGroups)
    for (auto* p : model.group(g)) {
      if (!p->trainable) continue;
      for (std::size_t i = 0; i < p->size(); i += std::max<std::size_t>(1, p->size() / 3)) {
        const double keep = p->value[i], h = 1e-5;
        p->value[i] = keep + h;
        const double lp = loss();
        p->value[i] = keep - h;
        const double lm = loss();
        p->value[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        SCOPED_TRACE(p->name);
        EXPECT_NEAR(p->grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
    }
  EXPECT_GT(checked, 200u);
}

TEST(Model, SaveLoadRoundTrip) {
  ModelSpec s;
  s.backbone = Backbone::crnet;
  s.offset_net = true;
  Model<float> a(s, 9);
  const auto dir = csi_djscc::testing::scratch_dir("model");
  BundleInfo info{-8.0, 6.0, {{"note", "x"}}};
  save_model(a, dir, info);
  BundleInfo back;
  auto b = load_model<float>(dir, &back, &s);
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  EXPECT_EQ(back.snr_lo_db, -8.0);
  EXPECT_EQ(back.snr_hi_db, 6.0);
  EXPECT_EQ(back.provenance["note"], "x");
  auto pa = a.all_params(), pb = b.all_params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);

  ModelSpec other = s;
  other.m = 16;
  EXPECT_THROW(load_model<float>(dir, nullptr, &other), FormatError);
}

TEST(Model, LoadRejectsBadBundles) {
  Model<float> a(ModelSpec{}, 10);
  const auto dir = csi_djscc::testing::scratch_dir("bad");
  save_model(a, dir);
  auto j = csi_djscc::detail::read_json(dir / "model.json");
  auto bad = j;
  bad["version"] = "csi-djscc-model/99";
  csi_djscc::detail::write_text(dir / "model.json", bad.dump());
  EXPECT_THROW(load_model<float>(dir), VersionError);
  bad = j;
  bad.erase("version");
  csi_djscc::detail::write_text(dir / "model.json", bad.dump());
  EXPECT_THROW(load_model<float>(dir), FormatError);
  bad = j;
  bad["spec"]["m"] = 7;
  csi_djscc::detail::write_text(dir / "model.json", bad.dump());
  EXPECT_THROW(load_model<float>(dir), FormatError);
  csi_djscc::detail::write_text(dir / "model.json", j.dump());
  fs::resize_file(dir / "theta.bin", 8);
  EXPECT_ANY_THROW(load_model<float>(dir));
  EXPECT_THROW(load_model<float>(dir / "missing"), FormatError);
}

TEST(Model, CopyGroups) {
  ModelSpec s;
  Model<float> a(s, 11), b(s, 12);
  EXPECT_NE(parameter_hash(a), parameter_hash(b));
  b.copy_from(a);
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  ModelSpec t = s;
  t.backbone = Backbone::crnet;
  Model<float> c(t, 13);
  const Group theta[] = {Group::theta};
  EXPECT_THROW(c.copy_groups_from(a, theta), ShapeError);
  const Group alpha[] = {Group::alpha};
  EXPECT_NO_THROW(c.copy_groups_from(a, alpha));
}
