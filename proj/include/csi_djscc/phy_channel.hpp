#pragma once

// Feedback link: real <-> complex codeword packing, average power
// normalization, AWGN and per-subcarrier fading with maximum ratio combining.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csi_djscc/errors.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc {

enum class ChannelMode { awgn, fading_mrc };

struct ChannelConfig {
  ChannelMode mode = ChannelMode::fading_mrc;
  bool equalize_mrc = false;
  std::size_t subcarrier_offset = 0;
};

/// s_i = c_i + j c_{k+i}.
inline std::vector<cplx> real_to_complex(std::span<const double> c) {
  if (c.size() % 2 != 0) throw ShapeError("real_to_complex: odd length " + std::to_string(c.size()));
  const std::size_t k = c.size() / 2;
  std::vector<cplx> s(k);
  for (std::size_t i = 0; i < k; ++i) s[i] = {c[i], c[k + i]};
  return s;
}

inline std::vector<double> complex_to_real(std::span<const cplx> s) {
  const std::size_t k = s.size();
  std::vector<double> c(2 * k);
  for (std::size_t i = 0; i < k; ++i) {
    c[i] = s[i].real();
    c[k + i] = s[i].imag();
  }
  return c;
}

/// s * sqrt(k) / ||s||, so that sum |s_i|^2 = k.
inline std::vector<cplx> power_normalize(std::span<const cplx> s) {
  double e = 0.0;
  for (const auto& v : s) e += std::norm(v);
  if (!(e > 0.0)) throw DegenerateError("power_normalize: all-zero codeword");
  const double g = std::sqrt(static_cast<double>(s.size()) / e);
  std::vector<cplx> out(s.begin(), s.end());
  for (auto& v : out) v *= g;
  return out;
}

/// Unit symbol power: sigma^2 = 10^(-mu/10). mu = +inf gives 0.
inline double snr_to_noise_power(SnrDb mu) {
  if (std::isinf(mu.value) && mu.value > 0) return 0.0;
  return std::pow(10.0, -mu.value / 10.0);
}

namespace detail {

inline cplx draw_cn01(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  const double re = g(rng);
  const double im = g(rng);
  return {re, im};
}

}  // namespace detail

inline std::vector<cplx> apply_awgn(std::span<const cplx> s, SnrDb mu, std::uint64_t noise_seed) {
  const double sigma = std::sqrt(snr_to_noise_power(mu));
  std::mt19937_64 rng(noise_seed);
  std::vector<cplx> out(s.begin(), s.end());
  for (auto& v : out) v += sigma * detail::draw_cn01(rng);
  return out;
}

/// y_i = h_u^i s_i + z_i over N_t antennas, s_hat_i = w_i^H y_i with w_i = h_u^i / ||h_u^i||.
/// h_u^i is row (subcarrier_offset + i) of h_up.
inline std::vector<cplx> apply_fading_mrc(std::span<const cplx> s, const ComplexMatrix& h_up, SnrDb mu,
                                          const ChannelConfig& cfg, std::uint64_t noise_seed) {
  const std::size_t k = s.size();
  if (cfg.subcarrier_offset + k > h_up.rows())
    throw ShapeError("apply_fading_mrc: not enough uplink subcarriers for k symbols");
  const double sigma = std::sqrt(snr_to_noise_power(mu));
  std::mt19937_64 rng(noise_seed);
  std::vector<cplx> out(k);
  std::vector<cplx> y(h_up.cols());
  for (std::size_t i = 0; i < k; ++i) {
    const auto h = h_up.row(cfg.subcarrier_offset + i);
    double hn2 = 0.0;
    for (const auto& v : h) hn2 += std::norm(v);
    if (!(hn2 > 0.0)) throw DegenerateError("apply_fading_mrc: zero-norm uplink channel on a feedback subcarrier");
    const double hn = std::sqrt(hn2);
    for (std::size_t a = 0; a < h.size(); ++a) y[a] = h[a] * s[i] + sigma * detail::draw_cn01(rng);
    cplx acc = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) acc += std::conj(h[a] / hn) * y[a];
    out[i] = cfg.equalize_mrc ? acc / hn : acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched, differentiable form used inside the learned pipelines.

/// Per-sample channel state for one batch: combining gains ||h_u^i|| and the
/// combined unit-variance noise w_i^H eps_i, drawn before the forward pass so
/// the map codeword -> received codeword is deterministic and differentiable.
struct ChannelRealization {
  std::size_t k = 0;
  std::vector<double> gain;        // [n * k + i]
  std::vector<cplx> unit_noise;    // [n * k + i], CN(0, 1)
  std::vector<double> sigma;       // [n]
};

/// Fills gains/noise for one sample. `h_up` may be empty for AWGN.
inline void draw_realization(ChannelRealization& r, std::size_t n, const ComplexMatrix* h_up, SnrDb mu,
                             const ChannelConfig& cfg, std::uint64_t noise_seed) {
  const std::size_t k = r.k;
  r.sigma[n] = std::sqrt(snr_to_noise_power(mu));
  std::mt19937_64 rng(noise_seed);
  for (std::size_t i = 0; i < k; ++i) {
    if (cfg.mode == ChannelMode::awgn) {
      r.gain[n * k + i] = 1.0;
      r.unit_noise[n * k + i] = detail::draw_cn01(rng);
      continue;
    }
    if (h_up == nullptr || cfg.subcarrier_offset + k > h_up->rows())
      throw ShapeError("draw_realization: not enough uplink subcarriers for k symbols");
    const auto h = h_up->row(cfg.subcarrier_offset + i);
    double hn2 = 0.0;
    for (const auto& v : h) hn2 += std::norm(v);
    if (!(hn2 > 0.0)) throw DegenerateError("draw_realization: zero-norm uplink channel");
    const double hn = std::sqrt(hn2);
    cplx z = 0.0;
    for (std::size_t a = 0; a < h.size(); ++a) z += std::conj(h[a] / hn) * detail::draw_cn01(rng);
    r.gain[n * k + i] = hn;
    r.unit_noise[n * k + i] = z;
  }
}

inline ChannelRealization make_realization(std::size_t batch, std::size_t k) {
  ChannelRealization r;
  r.k = k;
  r.gain.assign(batch * k, 1.0);
  r.unit_noise.assign(batch * k, 0.0);
  r.sigma.assign(batch, 0.0);
  return r;
}

/// real_to_complex -> power_normalize -> channel -> complex_to_real over a
/// batch. Codewords are columns of a (2k x N) row-major array.
template <typename T>
class FeedbackChannel {
 public:
  explicit FeedbackChannel(ChannelConfig cfg = {}) : cfg_(cfg) {}

  const ChannelConfig& config() const noexcept { return cfg_; }

  /// Largest |sum |s_i|^2 - k| seen in the last forward pass.
  double last_power_error() const noexcept { return power_error_; }

  /// Transmitted (power-normalized) symbols of the last forward pass, [n * k + i].
  const std::vector<std::complex<T>>& last_symbols() const noexcept { return tx_; }

  void forward(std::span<const T> c, std::span<T> c_hat, std::size_t batch, const ChannelRealization& r) {
    const std::size_t k = r.k;
    if (c.size() != 2 * k * batch || c_hat.size() != c.size()) throw ShapeError("FeedbackChannel: size mismatch");
    in_.assign(c.begin(), c.end());
    norm_.assign(batch, T(0));
    tx_.assign(batch * k, {});
    gain_.assign(batch * k, T(1));
    batch_ = batch;
    k_ = k;
    power_error_ = 0.0;
    const T sk = std::sqrt(static_cast<T>(k));
    for (std::size_t n = 0; n < batch; ++n) {
      T e = 0;
      for (std::size_t j = 0; j < 2 * k; ++j) e += c[j * batch + n] * c[j * batch + n];
      if (!(e > T(0))) throw DegenerateError("FeedbackChannel: all-zero codeword");
      const T nrm = std::sqrt(e);
      norm_[n] = nrm;
      const T g = sk / nrm;
      double p = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const std::complex<T> s{c[i * batch + n] * g, c[(k + i) * batch + n] * g};
        tx_[n * k + i] = s;
        p += static_cast<double>(std::norm(s));
        const T h = static_cast<T>(r.gain[n * k + i]);
        const std::complex<T> z{static_cast<T>(r.unit_noise[n * k + i].real()),
                                static_cast<T>(r.unit_noise[n * k + i].imag())};
        const T sig = static_cast<T>(r.sigma[n]);
        std::complex<T> y = h * s + sig * z;
        T dg = h;
        if (cfg_.equalize_mrc) {
          y /= h;
          dg = T(1);
        }
        gain_[n * k + i] = dg;
        c_hat[i * batch + n] = y.real();
        c_hat[(k + i) * batch + n] = y.imag();
      }
      power_error_ = std::max(power_error_, std::abs(p - static_cast<double>(k)));
    }
  }

  void backward(std::span<const T> d_out, std::span<T> d_in) const {
    const std::size_t k = k_, batch = batch_;
    const T sk = std::sqrt(static_cast<T>(k));
    std::vector<T> dy(2 * k);
    for (std::size_t n = 0; n < batch; ++n) {
      T dot = 0;
      for (std::size_t i = 0; i < k; ++i) {
        dy[i] = d_out[i * batch + n] * gain_[n * k + i];
        dy[k + i] = d_out[(k + i) * batch + n] * gain_[n * k + i];
      }
      for (std::size_t j = 0; j < 2 * k; ++j) dot += in_[j * batch + n] * dy[j];
      const T nrm = norm_[n];
      const T a = sk / nrm;
      const T b = dot / (nrm * nrm);
      for (std::size_t j = 0; j < 2 * k; ++j) d_in[j * batch + n] = a * (dy[j] - in_[j * batch + n] * b);
    }
  }

 private:
  ChannelConfig cfg_;
  std::vector<T> in_, norm_, gain_;
  std::vector<std::complex<T>> tx_;
  std::size_t batch_ = 0, k_ = 0;
  double power_error_ = 0.0;
};

}  // namespace csi_djscc
