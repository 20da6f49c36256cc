#pragma once

// Bit-level SSCC baseline pieces: mu-law midtread quantizer, capacity,
// ideal-scheme dimensioning, the threshold NMSE model and envelopes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/errors.hpp"
#include "csi_djscc/sweep.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc {

struct QuantizerSpec {
  int bits = 5;
  double companding_mu = 255.0;

  void validate() const {
    if (bits < 2 || bits > 8) throw ConfigError("QuantizerSpec: bits must be in [2, 8]");
    if (!(companding_mu > 0.0)) throw ConfigError("QuantizerSpec: companding_mu must be > 0");
  }
  /// 2^B - 1 levels so that zero is a level (midtread).
  std::size_t levels() const { return (std::size_t{1} << bits) - 1; }
  double step() const { return 2.0 / static_cast<double>(levels() - 1); }

  friend bool operator==(const QuantizerSpec&, const QuantizerSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(QuantizerSpec, bits, companding_mu)

inline double compand(double x, double mu) {
  return std::copysign(std::log1p(mu * std::abs(x)) / std::log1p(mu), x);
}

inline double expand(double y, double mu) {
  return std::copysign(std::expm1(std::abs(y) * std::log1p(mu)) / mu, y);
}

/// Value of level j in the signal domain.
inline double level_value(std::size_t j, const QuantizerSpec& q) {
  const std::size_t mid = (q.levels() - 1) / 2;
  if (j == mid) return 0.0;
  if (j == 0) return -1.0;
  if (j == q.levels() - 1) return 1.0;
  const double y = (static_cast<double>(j) - static_cast<double>(mid)) * q.step();
  return expand(y, q.companding_mu);
}

inline std::size_t quantize_one(double x, const QuantizerSpec& q) {
  const double xc = std::clamp(x, -1.0, 1.0);
  const double y = compand(xc, q.companding_mu);
  const double pos = std::round((y + 1.0) / q.step());
  return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(q.levels() - 1)));
}

inline std::vector<std::uint8_t> quantize(std::span<const double> c, const QuantizerSpec& q) {
  q.validate();
  std::vector<std::uint8_t> idx(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) idx[i] = static_cast<std::uint8_t>(quantize_one(c[i], q));
  return idx;
}

inline std::vector<double> dequantize(std::span<const std::uint8_t> idx, const QuantizerSpec& q) {
  q.validate();
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= q.levels()) throw ShapeError("dequantize: index out of range");
    out[i] = level_value(idx[i], q);
  }
  return out;
}

/// Largest round-trip error of any point in the cell that contains x (the
/// cell edges are the expanded half-step points around the level), plus the
/// clipping distance when |x| > 1.
inline double cell_error_bound(double x, const QuantizerSpec& q) {
  const double xc = std::clamp(x, -1.0, 1.0);
  const std::size_t j = quantize_one(xc, q);
  const std::size_t mid = (q.levels() - 1) / 2;
  const double yj = (static_cast<double>(j) - static_cast<double>(mid)) * q.step();
  const double lo = expand(std::max(-1.0, yj - q.step() / 2), q.companding_mu);
  const double hi = expand(std::min(1.0, yj + q.step() / 2), q.companding_mu);
  const double center = level_value(j, q);
  return std::max(center - lo, hi - center) + std::abs(x - xc);
}

// ---------------------------------------------------------------------------
// Ideal SSCC baseline

/// Bits per channel use at mean post-combining SNR mu: log2(1 + 10^(mu/10)).
inline double capacity(SnrDb mu) { return std::log2(1.0 + mu.linear()); }

/// Ergodic alternative: mean of log2(1 + |h|^2 10^(mu/10)) over combining gains.
inline double ergodic_capacity(SnrDb mu, std::span<const double> gains) {
  if (gains.empty()) throw ContractError("ergodic_capacity: no channel gains");
  double s = 0.0;
  for (double g : gains) s += std::log2(1.0 + g * g * mu.linear());
  return s / static_cast<double>(gains.size());
}

inline std::size_t ideal_dimension(std::size_t k, SnrDb mu, int bits) {
  if (k < 1 || bits < 1) throw ConfigError("ideal_dimension: k and B must be >= 1");
  const double v = static_cast<double>(k) * capacity(mu) / static_cast<double>(bits);
  // Guard against v landing a hair above an integer through rounding.
  const double r = std::round(v);
  const double m = std::abs(v - r) < 1e-9 ? r : std::ceil(v);
  return std::max<std::size_t>(1, static_cast<std::size_t>(m));
}

struct IdealSchemeSpec {
  std::size_t k = 16;
  int bits = 5;
  double design_snr_db = 10.0;

  std::size_t m() const { return ideal_dimension(k, SnrDb{design_snr_db}, bits); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IdealSchemeSpec, k, bits, design_snr_db)

/// NMSE (dB) of a quantized autoencoder at code dimension m, measured on noiseless bit transport.
using AutoencoderTable = std::map<std::size_t, double>;

inline constexpr double kFailureFloorDb = 0.0;

inline double sscc_ideal_nmse(const IdealSchemeSpec& s, SnrDb test_mu, const AutoencoderTable& table) {
  const auto it = table.find(s.m());
  if (it == table.end()) throw ContractError("sscc_ideal_nmse: no autoencoder entry for m = " + std::to_string(s.m()));
  return test_mu.value >= s.design_snr_db ? it->second : kFailureFloorDb;
}

inline SweepResult sscc_ideal_curve(const IdealSchemeSpec& s, std::span<const double> grid, const AutoencoderTable& table,
                                    std::string label = {}) {
  SweepResult r;
  r.label = label.empty() ? "SSCC-ideal@" + std::to_string(static_cast<int>(std::lround(s.design_snr_db))) + "dB" : label;
  r.snr_grid_db.assign(grid.begin(), grid.end());
  for (double mu : grid) r.nmse_db.push_back(sscc_ideal_nmse(s, SnrDb{mu}, table));
  r.provenance = {{"k", s.k}, {"bits", s.bits}, {"design_snr_db", s.design_snr_db}, {"m", s.m()},
                  {"capacity_model", "mean_post_mrc_snr"}};
  return r;
}

/// Pointwise minimum NMSE over curves that share a grid.
inline SweepResult envelope(std::span<const SweepResult> curves, std::string label = "envelope") {
  if (curves.empty()) throw ContractError("envelope: no curves");
  SweepResult r;
  r.label = std::move(label);
  r.family = curves.front().family;
  r.snr_grid_db = curves.front().snr_grid_db;
  r.nmse_db = curves.front().nmse_db;
  nlohmann::json members = nlohmann::json::array();
  for (const auto& c : curves) {
    if (c.snr_grid_db != r.snr_grid_db) throw ShapeError("envelope: grid mismatch for '" + c.label + "'");
    for (std::size_t i = 0; i < r.size(); ++i) r.nmse_db[i] = std::min(r.nmse_db[i], c.nmse_db[i]);
    members.push_back(c.label);
  }
  r.provenance = {{"envelope_of", members}};
  return r;
}

}  // namespace csi_djscc
