#include <cmath>
#include <functional>
#include <random>
#include <span>

#include <gtest/gtest.h>

#include "csi_djscc/nn/af_module.hpp"
#include "csi_djscc/nn/layers.hpp"
#include "csi_djscc/nn/tensor.hpp"

using namespace csi_djscc;
using namespace csi_djscc::nn;

namespace {

Tensor<double> random_tensor(std::size_t c, std::size_t n, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Tensor<double> t(c, n, h, w);
  for (auto& v : t.v) v = g(rng);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central-difference check of d(sum(w*f(x)))/d{x, params}.
void check_gradients(const std::function<Tensor<double>(const Tensor<double>&)>& fwd,
                     const std::function<Tensor<double>(const Tensor<double>&)>& bwd, ParamList<double> params,
                     Tensor<double> x, std::mt19937_64& rng, bool check_input = true, double tol = 1e-6) {
  const Tensor<double> y0 = fwd(x);
  Tensor<double> w = random_tensor(y0.c, y0.n, y0.h, y0.w, rng);
  for (auto* p : params) p->zero_grad();
  fwd(x);
  const Tensor<double> dx = bwd(w);
  const double h = 1e-6;
  auto loss = [&](const Tensor<double>& xx) { return dot(fwd(xx).v, w.v); };
  auto near = [&](double a, double b) { EXPECT_NEAR(a, b, tol * std::max(1.0, std::abs(b))); };
  if (check_input)
    for (std::size_t i = 0; i < x.v.size(); i += std::max<std::size_t>(1, x.v.size() / 40)) {
      const double keep = x.v[i];
      x.v[i] = keep + h;
      const double lp = loss(x);
      x.v[i] = keep - h;
      const double lm = loss(x);
      x.v[i] = keep;
      near(dx.v[i], (lp - lm) / (2 * h));
    }
  for (auto* p : params) {
    if (!p->trainable) continue;
    const auto grad = p->grad;
    for (std::size_t i = 0; i < p->size(); i += std::max<std::size_t>(1, p->size() / 25)) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss(x);
      p->value[i] = keep - h;
      const double lm = loss(x);
      p->value[i] = keep;
      SCOPED_TRACE(p->name);
      near(grad[i], (lp - lm) / (2 * h));
    }
  }
}

// Direct convolution with (k-1)/2 zero padding.
Tensor<double> brute_conv(const Tensor<double>& x, std::span<const double> wt, std::span<const double> b,
                          std::size_t cout, Kernel k) {
  const std::size_t ph = (k.kh - 1) / 2, pw = (k.kw - 1) / 2;
  const std::size_t ho = (x.h + 2 * ph - k.kh) / k.sh + 1, wo = (x.w + 2 * pw - k.kw) / k.sw + 1;
  Tensor<double> y(cout, x.n, ho, wo);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t n = 0; n < x.n; ++n)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t a = 0; a < k.kh; ++a)
              for (std::size_t e = 0; e < k.kw; ++e) {
                const long r = long(i * k.sh + a) - long(ph), q = long(j * k.sw + e) - long(pw);
                if (r < 0 || q < 0 || r >= long(x.h) || q >= long(x.w)) continue;
                s += wt[((o * x.c + c) * k.kh + a) * k.kw + e] * x.at(c, n, r, q);
              }
          y.at(o, n, i, j) = s;
        }
  return y;
}

}  // namespace

TEST(Tensor, FlattenRoundTrip) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(3, 2, 4, 5, rng);
  const auto f = flatten(x);
  EXPECT_EQ(f.c, 60u);
  EXPECT_EQ(f.v[((1 * 4 + 2) * 5 + 3) * 2 + 1], x.at(1, 1, 2, 3));
  EXPECT_EQ(unflatten(f, 3, 4, 5).v, x.v);
  EXPECT_THROW(unflatten(f, 2, 4, 5), ShapeError);
  const auto [a, b] = split_channels(concat_channels(x, x), 3);
  EXPECT_EQ(a.v, x.v);
  EXPECT_EQ(b.v, x.v);
}

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(2);
  for (Kernel k : {Kernel{3, 3, 1, 1}, Kernel{1, 9, 1, 1}, Kernel{9, 1, 1, 1}, Kernel{3, 3, 2, 1}, Kernel{7, 7, 1, 1}}) {
    Conv2d<double> conv("c", 3, 4, k, rng);
    std::normal_distribution<double> g;
    for (auto& v : conv.bias().value) v = g(rng);
    const auto x = random_tensor(3, 2, 12, 10, rng);
    const auto y = conv.forward(x);
    const auto ref = brute_conv(x, conv.weight().value, conv.bias().value, 4, k);
    ASSERT_TRUE(y.same_shape(ref));
    for (std::size_t i = 0; i < y.v.size(); ++i) EXPECT_NEAR(y.v[i], ref.v[i], 1e-12);
  }
}

TEST(Conv2d, Gradients) {
  std::mt19937_64 rng(3);
  Conv2d<double> conv("c", 2, 3, Kernel{3, 3, 2, 1}, rng);
  ParamList<double> ps;
  conv.collect(ps);
  check_gradients([&](const Tensor<double>& x) { return conv.forward(x); },
                  [&](const Tensor<double>& d) { return conv.backward(d); }, ps, random_tensor(2, 2, 8, 5, rng), rng);
}

TEST(ConvTranspose2d, IsAdjointOfConv) {
  std::mt19937_64 rng(4);
  Kernel k{3, 3, 2, 1};
  Conv2d<double> conv("c", 3, 2, k, rng);
  ConvTranspose2d<double> tconv("t", 2, 3, k, rng);
  // Share the weight layout: tconv weight (cin=2 x cout*kh*kw) mirrors conv weight (cout=2 x cin*kh*kw).
  tconv.weight().value = conv.weight().value;
  std::fill(conv.bias().value.begin(), conv.bias().value.end(), 0.0);
  std::fill(tconv.bias().value.begin(), tconv.bias().value.end(), 0.0);
  const auto x = random_tensor(3, 2, 16, 6, rng);
  const auto y = random_tensor(2, 2, 8, 6, rng);
  const auto ax = conv.forward(x);
  const auto aty = tconv.forward(y);
  ASSERT_TRUE(aty.same_shape(x));
  EXPECT_NEAR(dot(ax.v, y.v), dot(x.v, aty.v), 1e-9);
}

TEST(ConvTranspose2d, Gradients) {
  std::mt19937_64 rng(5);
  ConvTranspose2d<double> t("t", 3, 2, Kernel{3, 3, 2, 1}, rng);
  ParamList<double> ps;
  t.collect(ps);
  check_gradients([&](const Tensor<double>& x) { return t.forward(x); },
                  [&](const Tensor<double>& d) { return t.backward(d); }, ps, random_tensor(3, 2, 4, 5, rng), rng);
  EXPECT_EQ(t.forward(random_tensor(3, 1, 4, 5, rng)).h, 8u);
}

TEST(BatchNorm, TrainingStatisticsAndGradients) {
  std::mt19937_64 rng(6);
  BatchNorm<double> bn("bn", 3);
  auto x = random_tensor(3, 4, 3, 2, rng);
  for (auto& v : x.v) v = 2.0 + 3.0 * v;
  const auto y = bn.forward(x, true);
  const std::size_t m = y.per_channel();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < m; ++i) s += y.v[c * m + i];
    for (std::size_t i = 0; i < m; ++i) s2 += std::pow(y.v[c * m + i] - s / m, 2);
    EXPECT_NEAR(s / m, 0.0, 1e-12);
    EXPECT_NEAR(s2 / m, 1.0, 0.01);  // eps = 1e-3 on variance ~9
  }
  ParamList<double> ps;
  bn.collect(ps);
  EXPECT_FALSE(ps[2]->trainable);
  EXPECT_FALSE(ps[3]->trainable);
  std::normal_distribution<double> g;
  for (auto& v : ps[0]->value) v = 1.0 + 0.3 * g(rng);
  for (auto& v : ps[1]->value) v = g(rng);
  // Freeze running statistics across the FD evaluations.
  const auto mean = ps[2]->value, var = ps[3]->value;
  check_gradients(
      [&](const Tensor<double>& xx) {
        auto out = bn.forward(xx, true);
        ps[2]->value = mean;
        ps[3]->value = var;
        return out;
      },
      [&](const Tensor<double>& d) { return bn.backward(d); }, ps, x, rng);
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
  std::mt19937_64 rng(7);
  BatchNorm<double> bn("bn", 2);
  ParamList<double> ps;
  bn.collect(ps);
  ps[2]->value = {1.0, -2.0};
  ps[3]->value = {4.0, 0.25};
  const auto x = random_tensor(2, 3, 2, 2, rng);
  const auto y = bn.forward(x, false);
  const std::size_t m = x.per_channel();
  for (std::size_t i = 0; i < m; ++i) {
    EXPECT_NEAR(y.v[i], (x.v[i] - 1.0) / std::sqrt(4.0 + 1e-3), 1e-12);
    EXPECT_NEAR(y.v[m + i], (x.v[m + i] + 2.0) / std::sqrt(0.25 + 1e-3), 1e-12);
  }
  check_gradients([&](const Tensor<double>& xx) { return bn.forward(xx, false); },
                  [&](const Tensor<double>& d) { return bn.backward(d); }, ps, x, rng);
}

TEST(BatchNorm, RunningStatisticMomentum) {
  BatchNorm<double> bn("bn", 1);
  Tensor<double> x(1, 2, 1, 1);
  x.v = {1.0, 3.0};
  bn.forward(x, true);
  ParamList<double> ps;
  bn.collect(ps);
  EXPECT_NEAR(ps[2]->value[0], 0.01 * 2.0, 1e-12);
  EXPECT_NEAR(ps[3]->value[0], 0.99 + 0.01 * 1.0, 1e-12);
}

TEST(Activation, ValuesAndGradients) {
  std::mt19937_64 rng(8);
  for (Act a : {Act::prelu, Act::leaky, Act::relu, Act::sigmoid, Act::tanh, Act::none}) {
    Activation<double> act("a", a, 3);
    auto x = random_tensor(3, 2, 2, 3, rng);
    for (auto& v : x.v)
      if (std::abs(v) < 1e-3) v = 0.5;  // keep FD away from kinks
    const auto y = act.forward(x);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double v = x.v[i];
      double ref = v;
      switch (a) {
        case Act::prelu: ref = v < 0 ? 0.25 * v : v; break;
        case Act::leaky: ref = v < 0 ? 0.3 * v : v; break;
        case Act::relu: ref = std::max(v, 0.0); break;
        case Act::sigmoid: ref = 1.0 / (1.0 + std::exp(-v)); break;
        case Act::tanh: ref = std::tanh(v); break;
        case Act::none: break;
      }
      EXPECT_NEAR(y.v[i], ref, 1e-14);
    }
    ParamList<double> ps;
    act.collect(ps);
    EXPECT_EQ(ps.size(), a == Act::prelu ? 1u : 0u);
    check_gradients([&](const Tensor<double>& xx) { return act.forward(xx); },
                    [&](const Tensor<double>& d) { return act.backward(d); }, ps, x, rng);
  }
}

TEST(Dense, ValuesAndGradients) {
  std::mt19937_64 rng(9);
  Dense<double> fc("fc", 5, 3, rng);
  const auto x = random_tensor(5, 4, 1, 1, rng);
  const auto y = fc.forward(x);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t n = 0; n < 4; ++n) {
      double s = fc.bias().value[o];
      for (std::size_t i = 0; i < 5; ++i) s += fc.weight().value[o * 5 + i] * x.v[i * 4 + n];
      EXPECT_NEAR(y.v[o * 4 + n], s, 1e-12);
    }
  ParamList<double> ps;
  fc.collect(ps);
  check_gradients([&](const Tensor<double>& xx) { return fc.forward(xx); },
                  [&](const Tensor<double>& d) { return fc.backward(d); }, ps, x, rng);
  EXPECT_THROW(fc.forward(random_tensor(4, 1, 1, 1, rng)), ShapeError);
}

TEST(GlorotUniform, WithinLimit) {
  std::mt19937_64 rng(10);
  Dense<double> fc("fc", 40, 60, rng);
  const double lim = std::sqrt(6.0 / 100.0);
  double mx = 0;
  for (double v : fc.weight().value) mx = std::max(mx, std::abs(v));
  EXPECT_LE(mx, lim);
  EXPECT_GT(mx, 0.9 * lim);
  for (double v : fc.bias().value) EXPECT_EQ(v, 0.0);
}

TEST(AFModule, ZeroWeightsGiveHalfScale) {
  std::mt19937_64 rng(11);
  AFModule<double> af("af", AFModuleSpec{4, 0}, rng);
  ParamList<double> ps;
  af.collect(ps);
  for (auto* p : ps) std::fill(p->value.begin(), p->value.end(), 0.0);
  const auto x = random_tensor(4, 3, 2, 5, rng);
  const std::vector<double> snr{-10, 0, 10};
  const auto y = af.forward(x, snr);
  for (std::size_t i = 0; i < x.v.size(); ++i) EXPECT_DOUBLE_EQ(y.v[i], 0.5 * x.v[i]);
}

TEST(AFModule, ZeroFeaturesGiveZeroOutput) {
  std::mt19937_64 rng(12);
  AFModule<double> af("af", AFModuleSpec{3, 5}, rng);
  const Tensor<double> x(3, 2, 4, 4);
  for (double mu : {-10.0, 3.0, 10.0}) {
    const std::vector<double> snr{mu, mu};
    for (double v : af.forward(x, snr).v) EXPECT_EQ(v, 0.0);
  }
}

TEST(AFModule, PerChannelConstantRatio) {
  std::mt19937_64 rng(13);
  AFModule<double> af("af", AFModuleSpec{6, 0}, rng);
  const auto x = random_tensor(6, 3, 4, 3, rng);
  const std::vector<double> snr{-5, 2, 9};
  const auto y = af.forward(x, snr);
  const std::size_t hw = x.plane();
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t n = 0; n < 3; ++n) {
      const double r0 = y.v[(c * 3 + n) * hw] / x.v[(c * 3 + n) * hw];
      EXPECT_GT(r0, 0.0);
      EXPECT_LT(r0, 1.0);
      for (std::size_t i = 1; i < hw; ++i) EXPECT_NEAR(y.v[(c * 3 + n) * hw + i] / x.v[(c * 3 + n) * hw + i], r0, 1e-12);
    }
}

TEST(AFModule, GradientsAndParamCount) {
  std::mt19937_64 rng(14);
  const AFModuleSpec spec{5, 7};
  AFModule<double> af("af", spec, rng);
  ParamList<double> ps;
  af.collect(ps);
  std::size_t n = 0;
  for (auto* p : ps) n += p->size();
  EXPECT_EQ(n, (5 + 1) * 7 + 7 + 7 * 5 + 5);
  EXPECT_EQ(spec.param_count(), n);
  std::normal_distribution<double> g;
  for (auto* p : ps)
    for (auto& v : p->value) v = 0.5 * g(rng);
  const std::vector<double> snr{-3, 4};
  check_gradients([&](const Tensor<double>& xx) { return af.forward(xx, snr); },
                  [&](const Tensor<double>& d) { return af.backward(d); }, ps, random_tensor(5, 2, 3, 3, rng), rng);
  EXPECT_THROW(af.forward(random_tensor(4, 2, 3, 3, rng), snr), ShapeError);
  EXPECT_THROW(af.forward(random_tensor(5, 3, 3, 3, rng), snr), ShapeError);
}

TEST(AFModule, SnrChangesScales) {
  std::mt19937_64 rng(15);
  AFModule<double> af("af", AFModuleSpec{4, 0}, rng);
  auto x = random_tensor(4, 1, 3, 3, rng);
  for (auto& v : x.v) v = std::abs(v);  // positive pooled context keeps relu units alive
  const std::vector<double> lo{-10}, hi{10};
  af.forward(x, lo);
  const auto s0 = af.last_scales().v;
  af.forward(x, hi);
  EXPECT_NE(s0, af.last_scales().v);
}
