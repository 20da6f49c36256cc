#pragma once

// Clustered-multipath CSI generator. Each sample draws one path geometry and
// evaluates it at the downlink and uplink carriers, so the two links share
// delays and angles but differ in carrier phase and array response.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/errors.hpp"
#include "csi_djscc/transforms.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc {

struct ChannelScenario {
  std::size_t n_tx = 32;
  std::size_t n_sub = 256;
  std::size_t n_trunc = 32;
  double bandwidth_hz = 20e6;
  double f_down_hz = 5.2e9;
  double f_up_hz = 5.4e9;
  std::size_t n_clusters = 3;
  std::size_t paths_per_cluster = 8;
  double delay_spread_s = 400e-9;
  double angle_spread_deg = 5.0;
  // Exponential power-delay decay constant of the cluster powers.
  double power_decay_s = 100e-9;
  // FFT window placed this far ahead of the first possible arrival.
  double timing_offset_s = 400e-9;
  // Round path delays to multiples of 1/bandwidth (tapped delay line). A short
  // delay axis leaks more than 1% of the energy out of the truncation window
  // when delays fall between taps.
  bool sample_spaced_delays = false;
  std::uint64_t seed = 1;

  TruncationSpec truncation() const { return {n_trunc, n_sub, n_tx}; }
  double subcarrier_spacing_hz() const { return bandwidth_hz / static_cast<double>(n_sub); }

  void validate() const {
    if (n_tx < 1) throw ConfigError("scenario: n_tx must be >= 1");
    if (n_sub < 2) throw ConfigError("scenario: n_sub must be >= 2");
    if (n_trunc < 1 || n_trunc > n_sub) throw ConfigError("scenario: need 1 <= n_trunc <= n_sub");
    if (!(bandwidth_hz > 0.0)) throw ConfigError("scenario: bandwidth_hz must be positive");
    if (!(f_down_hz > 0.0) || !(f_up_hz > 0.0)) throw ConfigError("scenario: carriers must be positive");
    if (f_up_hz == f_down_hz) throw ConfigError("scenario: FDD requires f_up_hz != f_down_hz");
    if (n_clusters < 1 || paths_per_cluster < 1) throw ConfigError("scenario: need at least one path");
    if (!(delay_spread_s >= 0.0) || !(angle_spread_deg >= 0.0) || !(timing_offset_s >= 0.0))
      throw ConfigError("scenario: spreads and offsets must be non-negative");
    if (!(power_decay_s > 0.0)) throw ConfigError("scenario: power_decay_s must be positive");
    if (!(delay_spread_s + timing_offset_s < static_cast<double>(n_trunc) / bandwidth_hz))
      throw ConfigError("scenario: delay_spread_s + timing_offset_s must stay below n_trunc/bandwidth_hz");
  }

  /// N_t=32, N_c=256, N_c'=32, 20 MHz.
  static ChannelScenario full() { return ChannelScenario{}; }

  /// N_t=16, N_c=64, N_c'=16, 10 MHz (same N_c'/bandwidth window as full), sample-spaced delays.
  static ChannelScenario desk() {
    ChannelScenario s;
    s.n_tx = 16;
    s.n_sub = 64;
    s.n_trunc = 16;
    s.bandwidth_hz = 10e6;
    s.sample_spaced_delays = true;
    return s;
  }

  friend bool operator==(const ChannelScenario&, const ChannelScenario&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChannelScenario, n_tx, n_sub, n_trunc, bandwidth_hz,
                                                f_down_hz, f_up_hz, n_clusters, paths_per_cluster,
                                                delay_spread_s, angle_spread_deg, power_decay_s,
                                                timing_offset_s, sample_spaced_delays, seed)

struct PathSet {
  std::vector<cplx> gains;
  std::vector<double> delays;  // s
  std::vector<double> angles;  // rad, azimuth of departure

  std::size_t size() const noexcept { return gains.size(); }
  double total_power() const {
    double p = 0.0;
    for (const auto& g : gains) p += std::norm(g);
    return p;
  }

  void validate(const ChannelScenario& sc) const {
    if (gains.empty()) throw ConfigError("PathSet: needs at least one path");
    if (delays.size() != gains.size() || angles.size() != gains.size())
      throw ShapeError("PathSet: field lengths differ");
    if (!(total_power() > 0.0)) throw ConfigError("PathSet: all gains are zero");
    for (double d : delays)
      if (d < 0.0 || d > sc.delay_spread_s) throw ConfigError("PathSet: delay outside [0, delay_spread_s]");
  }
};

/// Draws n_clusters x paths_per_cluster paths; total power normalized to 1.
inline PathSet sample_paths(const ChannelScenario& sc, std::uint64_t seed) {
  sc.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  constexpr double deg = std::numbers::pi / 180.0;

  const double spread = sc.angle_spread_deg;
  auto laplace_offset = [&]() {
    if (spread <= 0.0) return 0.0;
    const double b = spread / 2.0;
    for (;;) {
      const double u = unit(rng) - 0.5;
      const double x = -b * std::copysign(1.0, u) * std::log(1.0 - 2.0 * std::abs(u));
      if (std::abs(x) <= spread) return x;
    }
  };

  PathSet ps;
  const std::size_t n = sc.n_clusters * sc.paths_per_cluster;
  ps.gains.reserve(n);
  ps.delays.reserve(n);
  ps.angles.reserve(n);
  for (std::size_t c = 0; c < sc.n_clusters; ++c) {
    const double center_deg = -60.0 + 120.0 * unit(rng);
    const double tau_c = sc.delay_spread_s * unit(rng);
    const double cluster_power = std::exp(-tau_c / sc.power_decay_s);
    for (std::size_t p = 0; p < sc.paths_per_cluster; ++p) {
      const double jitter = 0.05 * sc.delay_spread_s * (2.0 * unit(rng) - 1.0);
      double tau = std::clamp(tau_c + jitter, 0.0, sc.delay_spread_s);
      if (sc.sample_spaced_delays) {
        const double ts = 1.0 / sc.bandwidth_hz;
        tau = std::min(std::round(tau / ts), std::floor(sc.delay_spread_s / ts)) * ts;
      }
      const double theta = (center_deg + laplace_offset()) * deg;
      const double amp = std::sqrt(cluster_power / static_cast<double>(sc.paths_per_cluster));
      const double re = gauss(rng);
      const double im = gauss(rng);
      ps.gains.emplace_back(amp * re, amp * im);
      ps.delays.push_back(tau);
      ps.angles.push_back(theta);
    }
  }
  double power = ps.total_power();
  if (!(power > 0.0)) {
    // Measure-zero event; fall back to a unit first path.
    ps.gains.front() = 1.0;
    power = ps.total_power();
  }
  const double norm = 1.0 / std::sqrt(power);
  for (auto& g : ps.gains) g *= norm;
  return ps;
}

/// H[n,t] = sum_p g_p e^{-j2pi f_c tau_p} e^{-j2pi f_n (tau_p + tau_0)} e^{-j pi (f_c/f_down) t sin(theta_p)},
/// f_n = n * bandwidth / N_c, half-wavelength ULA at the downlink carrier.
inline ComplexMatrix synthesize_csi(const PathSet& paths, double carrier_hz, const ChannelScenario& sc) {
  paths.validate(sc);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double df = sc.subcarrier_spacing_hz();
  const double spacing = carrier_hz / sc.f_down_hz;  // antenna spacing in half-wavelengths
  ComplexMatrix h(sc.n_sub, sc.n_tx);
  std::vector<cplx> freq(sc.n_sub), steer(sc.n_tx);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const double tau = paths.delays[p];
    const cplx g = paths.gains[p] * std::polar(1.0, -two_pi * std::fmod(carrier_hz * tau, 1.0));
    // Recurrences would drift over 256 steps; evaluate directly.
    for (std::size_t n = 0; n < sc.n_sub; ++n)
      freq[n] = g * std::polar(1.0, -two_pi * std::fmod(df * static_cast<double>(n) * (tau + sc.timing_offset_s), 1.0));
    const double s = std::sin(paths.angles[p]);
    for (std::size_t t = 0; t < sc.n_tx; ++t)
      steer[t] = std::polar(1.0, -std::numbers::pi * spacing * static_cast<double>(t) * s);
    for (std::size_t n = 0; n < sc.n_sub; ++n) {
      auto row = h.row(n);
      for (std::size_t t = 0; t < sc.n_tx; ++t) row[t] += freq[n] * steer[t];
    }
  }
  return h;
}

/// Pearson correlation of |H_d| and |H_u| entries of one sample.
inline double magnitude_correlation(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (!a.same_shape(b)) throw ShapeError("magnitude_correlation: shape mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += std::abs(a.data()[i]);
    mb += std::abs(b.data()[i]);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = std::abs(a.data()[i]) - ma;
    const double db = std::abs(b.data()[i]) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Normalization

/// Global min/max over real and imaginary parts; maps affinely to [0, 1].
struct NormStats {
  double min = 0.0;
  double max = 1.0;

  double range() const { return max - min; }
  void check() const {
    if (!(max > min)) throw DegenerateError("NormStats: min == max (degenerate statistics)");
  }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NormStats, min, max)

/// Two-channel real image of a complex matrix: data[(ch * rows + r) * cols + c], ch 0 = real, 1 = imag.
struct RealTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double& at(std::size_t ch, std::size_t r, std::size_t c) { return data[(ch * rows + r) * cols + c]; }
  double at(std::size_t ch, std::size_t r, std::size_t c) const { return data[(ch * rows + r) * cols + c]; }
};

inline RealTensor normalize(const ComplexMatrix& h, const NormStats& st, bool clamp = false) {
  st.check();
  RealTensor t{h.rows(), h.cols(), std::vector<double>(2 * h.size())};
  const double inv = 1.0 / st.range();
  for (std::size_t r = 0; r < h.rows(); ++r) {
    for (std::size_t c = 0; c < h.cols(); ++c) {
      double re = (h(r, c).real() - st.min) * inv;
      double im = (h(r, c).imag() - st.min) * inv;
      if (clamp) {
        re = std::clamp(re, 0.0, 1.0);
        im = std::clamp(im, 0.0, 1.0);
      }
      t.at(0, r, c) = re;
      t.at(1, r, c) = im;
    }
  }
  return t;
}

inline ComplexMatrix denormalize(const RealTensor& x, const NormStats& st) {
  st.check();
  if (x.data.size() != 2 * x.rows * x.cols) throw ShapeError("denormalize: tensor size mismatch");
  ComplexMatrix h(x.rows, x.cols);
  const double s = st.range();
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c)
      h(r, c) = {st.min + s * x.at(0, r, c), st.min + s * x.at(1, r, c)};
  return h;
}

// ---------------------------------------------------------------------------
// Dataset

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline constexpr const char* kDatasetVersion = "csi-djscc-dataset/1";

struct DatasetManifest {
  std::string version = kDatasetVersion;
  ChannelScenario scenario;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  NormStats sf_stats;      // downlink, spatial-frequency domain, train split
  NormStats ad_stats;      // downlink, truncated angular-delay domain, train split
  double uplink_scale = 1.0;

  std::size_t count(Split s) const {
    switch (s) {
      case Split::train: return n_train;
      case Split::val: return n_val;
      case Split::test: return n_test;
    }
    return 0;
  }
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetManifest, version, scenario, seed, n_train, n_val, n_test,
                                   sf_stats, ad_stats, uplink_scale)

/// Paired CSI samples held in the on-disk layout [N, N_c, N_t, link, re/im] as float32.
class CsiDataset {
 public:
  CsiDataset() = default;
  explicit CsiDataset(DatasetManifest m) : manifest_(std::move(m)) {
    for (Split s : {Split::train, Split::val, Split::test})
      block(s).assign(manifest_.count(s) * sample_floats(), 0.0f);
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  DatasetManifest& manifest() noexcept { return manifest_; }
  const ChannelScenario& scenario() const noexcept { return manifest_.scenario; }
  std::size_t count(Split s) const { return manifest_.count(s); }

  std::size_t sample_floats() const { return manifest_.scenario.n_sub * manifest_.scenario.n_tx * 4; }

  std::vector<float>& block(Split s) { return s == Split::train ? train_ : s == Split::val ? val_ : test_; }
  const std::vector<float>& block(Split s) const {
    return s == Split::train ? train_ : s == Split::val ? val_ : test_;
  }

  /// link 0 = downlink, 1 = uplink.
  ComplexMatrix link(Split s, std::size_t i, int which) const {
    const auto& sc = manifest_.scenario;
    const float* p = block(s).data() + i * sample_floats();
    ComplexMatrix h(sc.n_sub, sc.n_tx);
    for (std::size_t n = 0; n < sc.n_sub; ++n)
      for (std::size_t t = 0; t < sc.n_tx; ++t) {
        const float* e = p + ((n * sc.n_tx + t) * 2 + which) * 2;
        h(n, t) = {e[0], e[1]};
      }
    return h;
  }
  ComplexMatrix h_down(Split s, std::size_t i) const { return link(s, i, 0); }
  ComplexMatrix h_up(Split s, std::size_t i) const { return link(s, i, 1); }

  void set_link(Split s, std::size_t i, int which, const ComplexMatrix& h) {
    const auto& sc = manifest_.scenario;
    if (h.rows() != sc.n_sub || h.cols() != sc.n_tx) throw ShapeError("CsiDataset: sample shape mismatch");
    float* p = block(s).data() + i * sample_floats();
    for (std::size_t n = 0; n < sc.n_sub; ++n)
      for (std::size_t t = 0; t < sc.n_tx; ++t) {
        float* e = p + ((n * sc.n_tx + t) * 2 + which) * 2;
        e[0] = static_cast<float>(h(n, t).real());
        e[1] = static_cast<float>(h(n, t).imag());
      }
  }

  /// FNV-1a over manifest JSON and every split's bytes.
  std::string content_hash() const {
    Fnv1a h;
    h.update(nlohmann::json(manifest_).dump());
    for (Split s : {Split::train, Split::val, Split::test})
      h.update(block(s).data(), block(s).size() * sizeof(float));
    return h.hex();
  }

  friend bool operator==(const CsiDataset&, const CsiDataset&) = default;

 private:
  DatasetManifest manifest_;
  std::vector<float> train_, val_, test_;
};

/// Mean over the train split of per-subcarrier ||h_u^i||^2.
inline double mean_uplink_subcarrier_energy(const CsiDataset& d) {
  const auto& sc = d.scenario();
  const auto& b = d.block(Split::train);
  double acc = 0.0;
  const std::size_t n = d.count(Split::train);
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = b.data() + i * d.sample_floats();
    for (std::size_t e = 0; e < sc.n_sub * sc.n_tx; ++e) {
      const double re = p[e * 4 + 2];
      const double im = p[e * 4 + 3];
      acc += re * re + im * im;
    }
  }
  return acc / static_cast<double>(n * sc.n_sub);
}

/// Min/max of real and imaginary parts of the downlink, in the
/// spatial-frequency domain and the truncated angular-delay domain.
inline void compute_statistics(CsiDataset& d) {
  const auto& sc = d.scenario();
  const auto spec = sc.truncation();
  double sf_lo = std::numeric_limits<double>::infinity(), sf_hi = -sf_lo;
  double ad_lo = sf_lo, ad_hi = -sf_lo;
  for (std::size_t i = 0; i < d.count(Split::train); ++i) {
    const ComplexMatrix h = d.h_down(Split::train, i);
    for (const auto& v : h.data()) {
      sf_lo = std::min({sf_lo, v.real(), v.imag()});
      sf_hi = std::max({sf_hi, v.real(), v.imag()});
    }
    const auto f = truncate(sf_to_ad(h), spec);
    for (const auto& v : f.values.data()) {
      ad_lo = std::min({ad_lo, v.real(), v.imag()});
      ad_hi = std::max({ad_hi, v.real(), v.imag()});
    }
  }
  d.manifest().sf_stats = {sf_lo, sf_hi};
  d.manifest().ad_stats = {ad_lo, ad_hi};
}

inline CsiDataset generate_dataset(const ChannelScenario& sc, std::size_t n_train, std::size_t n_val,
                                   std::size_t n_test, std::uint64_t seed) {
  sc.validate();
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("generate_dataset: split counts must be >= 1");
  DatasetManifest m;
  m.scenario = sc;
  m.seed = seed;
  m.n_train = n_train;
  m.n_val = n_val;
  m.n_test = n_test;
  CsiDataset d(m);

  std::size_t global = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    for (std::size_t i = 0; i < d.count(s); ++i, ++global) {
      const PathSet ps = sample_paths(sc, derive_seed(seed, global));
      d.set_link(s, i, 0, synthesize_csi(ps, sc.f_down_hz, sc));
      d.set_link(s, i, 1, synthesize_csi(ps, sc.f_up_hz, sc));
    }
  }

  // Unit mean per-subcarrier uplink energy over the train split. A second
  // pass absorbs the float rounding of the first rescale.
  double scale = 1.0;
  for (int pass = 0; pass < 2; ++pass) {
    const double e = mean_uplink_subcarrier_energy(d);
    if (!(e > 0.0)) throw DegenerateError("generate_dataset: zero uplink energy");
    const double s = 1.0 / std::sqrt(e);
    scale *= s;
    for (Split sp : {Split::train, Split::val, Split::test}) {
      auto& b = d.block(sp);
      for (std::size_t e4 = 0; e4 < b.size(); e4 += 4) {
        b[e4 + 2] = static_cast<float>(b[e4 + 2] * s);
        b[e4 + 3] = static_cast<float>(b[e4 + 3] * s);
      }
    }
  }
  d.manifest().uplink_scale = scale;
  compute_statistics(d);
  return d;
}

}  // namespace csi_djscc
