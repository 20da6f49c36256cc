#pragma once

// NMSE-vs-SNR curve shared by evaluation, baselines and reports.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/errors.hpp"

namespace csi_djscc {

struct SweepResult {
  std::string label;
  std::string family;
  std::vector<double> snr_grid_db;
  std::vector<double> nmse_db;  // -inf marks exact reconstruction
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const noexcept { return snr_grid_db.size(); }

  void validate() const {
    if (snr_grid_db.size() != nmse_db.size()) throw ShapeError("SweepResult '" + label + "': grid/NMSE length mismatch");
    for (std::size_t i = 1; i < snr_grid_db.size(); ++i)
      if (!(snr_grid_db[i] > snr_grid_db[i - 1])) throw ContractError("SweepResult '" + label + "': grid not strictly increasing");
    for (double v : nmse_db)
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw ContractError("SweepResult '" + label + "': NMSE must be finite or -inf");
  }

  double mean_nmse_db() const {
    double s = 0.0;
    for (double v : nmse_db) s += v;
    return nmse_db.empty() ? 0.0 : s / static_cast<double>(nmse_db.size());
  }

  double at(double snr_db) const {
    for (std::size_t i = 0; i < size(); ++i)
      if (snr_grid_db[i] == snr_db) return nmse_db[i];
    throw ContractError("SweepResult '" + label + "': SNR " + std::to_string(snr_db) + " dB not on grid");
  }
};

namespace detail {

// JSON has no infinities; they are written as the strings "inf" / "-inf".
inline nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double parse_number_or_inf(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("expected number, got string '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const SweepResult& r) {
  nlohmann::json grid = nlohmann::json::array(), nmse = nlohmann::json::array();
  for (double v : r.snr_grid_db) grid.push_back(detail::number_or_inf(v));
  for (double v : r.nmse_db) nmse.push_back(detail::number_or_inf(v));
  j = {{"label", r.label}, {"family", r.family}, {"snr_grid_db", grid}, {"nmse_db", nmse}, {"provenance", r.provenance}};
}

inline void from_json(const nlohmann::json& j, SweepResult& r) {
  r.label = j.at("label").get<std::string>();
  r.family = j.value("family", std::string{});
  r.snr_grid_db.clear();
  r.nmse_db.clear();
  for (const auto& v : j.at("snr_grid_db")) r.snr_grid_db.push_back(detail::parse_number_or_inf(v));
  for (const auto& v : j.at("nmse_db")) r.nmse_db.push_back(detail::parse_number_or_inf(v));
  r.provenance = j.value("provenance", nlohmann::json::object());
}

}  // namespace csi_djscc
