#pragma once

// results.json, one SVG plot per experiment family and a markdown summary.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/dataset_io.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/evaluation.hpp"
#include "csi_djscc/sweep.hpp"

namespace csi_djscc {

inline constexpr const char* kResultsVersion = "csi-djscc-results/1";

struct ResultsFile {
  std::string version = kResultsVersion;
  nlohmann::json provenance = nlohmann::json::object();  // config hash, seeds, dataset hash
  std::vector<SweepResult> curves;
  nlohmann::json metrics = nlohmann::json::object();
};

inline nlohmann::json to_json_value(const ResultsFile& r) {
  nlohmann::json j;
  j["version"] = r.version;
  j["provenance"] = r.provenance;
  j["curves"] = r.curves;
  j["metrics"] = r.metrics;
  return j;
}

inline ResultsFile results_from_json(const nlohmann::json& j) {
  ResultsFile r;
  if (!j.contains("version")) throw FormatError("results: missing version tag");
  r.version = j.at("version").get<std::string>();
  if (r.version != kResultsVersion) throw VersionError("results: unsupported version " + r.version);
  r.provenance = j.value("provenance", nlohmann::json::object());
  for (const auto& c : j.at("curves")) r.curves.push_back(c.get<SweepResult>());
  r.metrics = j.value("metrics", nlohmann::json::object());
  return r;
}

inline void save_results(const ResultsFile& r, const std::filesystem::path& file) {
  detail::write_text(file, to_json_value(r).dump(2) + "\n");
}

inline ResultsFile load_results(const std::filesystem::path& file) { return results_from_json(detail::read_json(file)); }

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Line plot of NMSE (dB) against SNR (dB). -inf points are drawn on the bottom edge.
inline std::string render_svg(const std::string& title, const std::vector<const SweepResult*>& curves) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double W = 720, H = 480, ml = 70, mr = 200, mt = 40, mb = 60;
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto* c : curves)
    for (std::size_t i = 0; i < c->size(); ++i) {
      if (std::isfinite(c->snr_grid_db[i])) {
        xlo = std::min(xlo, c->snr_grid_db[i]);
        xhi = std::max(xhi, c->snr_grid_db[i]);
      }
      if (std::isfinite(c->nmse_db[i])) {
        ylo = std::min(ylo, c->nmse_db[i]);
        yhi = std::max(yhi, c->nmse_db[i]);
      }
    }
  if (xlo > xhi) xlo = -1, xhi = 1;
  if (ylo > yhi) ylo = -1, yhi = 0;
  if (xhi - xlo < 1e-9) xlo -= 1, xhi += 1;
  ylo = std::floor(ylo - 1.0);
  yhi = std::ceil(yhi + 1.0);
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto X = [&](double x) { return ml + (std::isfinite(x) ? (x - xlo) / (xhi - xlo) : 1.0) * pw; };
  auto Y = [&](double y) { return mt + (std::isfinite(y) ? (yhi - y) / (yhi - ylo) : 1.0) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << ml + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  const int xt = 10, yt = 8;
  for (int i = 0; i <= xt; ++i) {
    const double x = xlo + (xhi - xlo) * i / xt;
    s << "<line x1=\"" << X(x) << "\" y1=\"" << mt << "\" x2=\"" << X(x) << "\" y2=\"" << mt + ph << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << X(x) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">" << fmt(x, 1) << "</text>\n";
  }
  for (int i = 0; i <= yt; ++i) {
    const double y = ylo + (yhi - ylo) * i / yt;
    s << "<line x1=\"" << ml << "\" y1=\"" << Y(y) << "\" x2=\"" << ml + pw << "\" y2=\"" << Y(y) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << Y(y) + 4 << "\" text-anchor=\"end\">" << fmt(y, 1) << "</text>\n";
  }
  s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
  s << "<text x=\"18\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << mt + ph / 2
    << ")\">NMSE (dB)</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto* c = curves[k];
    const char* col = kColors[k % 10];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c->size(); ++i) s << X(c->snr_grid_db[i]) << "," << Y(c->nmse_db[i]) << " ";
    s << "\"/>\n";
    for (std::size_t i = 0; i < c->size(); ++i)
      s << "<circle cx=\"" << X(c->snr_grid_db[i]) << "\" cy=\"" << Y(c->nmse_db[i]) << "\" r=\"2.5\" fill=\"" << col << "\"/>\n";
    const double ly = mt + 14 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << ml + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 32 << "\" y2=\"" << ly << "\" stroke=\""
      << col << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << ml + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(c->label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace detail

inline const std::map<std::string, std::string>& family_titles() {
  static const std::map<std::string, std::string> t = {
      {"validity", "ADJSCC vs SSCC envelope"},
      {"adaptability", "ADJSCC vs fixed-SNR DJSCC"},
      {"ablation", "Nonlinear transform vs DFT truncation"},
      {"generality", "Backbone generality"},
      {"smoke", "Smoke run"},
  };
  return t;
}

/// Writes results.json, <family>.svg per family and report.md. Returns the files written.
inline std::vector<std::filesystem::path> make_report(const ResultsFile& results, const std::filesystem::path& out_dir) {
  if (results.curves.empty()) throw ContractError("make_report: no results to report");
  for (const auto& c : results.curves) c.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> files;

  const auto rj = out_dir / "results.json";
  save_results(results, rj);
  files.push_back(rj);

  std::map<std::string, std::vector<const SweepResult*>> fam;
  for (const auto& c : results.curves) fam[c.family.empty() ? "misc" : c.family].push_back(&c);
  for (const auto& [name, curves] : fam) {
    const auto it = family_titles().find(name);
    const std::string title = it == family_titles().end() ? name : it->second;
    const auto f = out_dir / (name + ".svg");
    detail::write_text(f, detail::render_svg(title, curves));
    files.push_back(f);
  }

  std::ostringstream md;
  md << "# Results\n\n";
  if (results.provenance.contains("config_hash"))
    md << "Config hash `" << results.provenance["config_hash"].get<std::string>() << "`";
  if (results.provenance.contains("dataset_hash"))
    md << ", dataset hash `" << results.provenance["dataset_hash"].get<std::string>() << "`";
  md << "\n\n";
  for (const auto& [name, curves] : fam) {
    const auto it = family_titles().find(name);
    md << "## " << (it == family_titles().end() ? name : it->second) << "\n\n";
    md << "![" << name << "](" << name << ".svg)\n\n";
    md << "| curve | mean NMSE (dB) | cliff (dB) |";
    for (double x : curves.front()->snr_grid_db) md << " " << detail::fmt(x, 0) << " |";
    md << "\n|---|---|---|";
    for (std::size_t i = 0; i < curves.front()->size(); ++i) md << "---|";
    md << "\n";
    for (const auto* c : curves) {
      md << "| " << c->label << " | " << detail::fmt(c->mean_nmse_db()) << " | "
         << (c->size() >= 2 ? detail::fmt(cliff_metric(*c)) : std::string("n/a")) << " |";
      for (std::size_t i = 0; i < curves.front()->size(); ++i)
        md << " " << (i < c->size() ? detail::fmt(c->nmse_db[i]) : std::string()) << " |";
      md << "\n";
    }
    md << "\n";
  }
  if (!results.metrics.empty()) md << "## Metrics\n\n```json\n" << results.metrics.dump(2) << "\n```\n";
  const auto rm = out_dir / "report.md";
  detail::write_text(rm, md.str());
  files.push_back(rm);
  return files;
}

}  // namespace csi_djscc
