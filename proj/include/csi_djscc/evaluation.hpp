#pragma once

// NMSE, SNR sweeps and cliff metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/pipeline.hpp"
#include "csi_djscc/sweep.hpp"
#include "csi_djscc/training.hpp"

namespace csi_djscc {

inline double to_db(double linear) {
  return linear > 0.0 ? 10.0 * std::log10(linear) : -std::numeric_limits<double>::infinity();
}

/// ||H - H_hat||^2 / ||H||^2 for one sample.
inline double nmse_ratio(const ComplexMatrix& h, const ComplexMatrix& h_hat) {
  if (!h.same_shape(h_hat)) throw ShapeError("nmse: shape mismatch");
  const double ref = h.squared_norm();
  if (!(ref > 0.0)) throw DegenerateError("nmse: zero-norm reference");
  double num = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) num += std::norm(h.data()[i] - h_hat.data()[i]);
  return num / ref;
}

inline double nmse(const ComplexMatrix& h, const ComplexMatrix& h_hat) { return to_db(nmse_ratio(h, h_hat)); }

enum class NmseAveraging { mean_of_ratios, ratio_of_means };

/// NMSE (dB) over a set. Exact reconstruction gives -inf.
class NmseAccumulator {
 public:
  explicit NmseAccumulator(NmseAveraging mode = NmseAveraging::mean_of_ratios) : mode_(mode) {}

  void add(const ComplexMatrix& h, const ComplexMatrix& h_hat) {
    if (!h.same_shape(h_hat)) throw ShapeError("nmse: shape mismatch");
    const double ref = h.squared_norm();
    if (!(ref > 0.0)) throw DegenerateError("nmse: zero-norm reference");
    double num = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) num += std::norm(h.data()[i] - h_hat.data()[i]);
    ratio_sum_ += num / ref;
    num_sum_ += num;
    ref_sum_ += ref;
    ++count_;
  }

  std::size_t count() const noexcept { return count_; }
  double linear() const {
    if (count_ == 0) throw ContractError("nmse: empty set");
    return mode_ == NmseAveraging::mean_of_ratios ? ratio_sum_ / static_cast<double>(count_) : num_sum_ / ref_sum_;
  }
  double db() const { return to_db(linear()); }

 private:
  NmseAveraging mode_;
  double ratio_sum_ = 0.0, num_sum_ = 0.0, ref_sum_ = 0.0;
  std::size_t count_ = 0;
};

inline double nmse(std::span<const ComplexMatrix> h, std::span<const ComplexMatrix> h_hat,
                   NmseAveraging mode = NmseAveraging::mean_of_ratios) {
  if (h.size() != h_hat.size()) throw ShapeError("nmse: set sizes differ");
  NmseAccumulator acc(mode);
  for (std::size_t i = 0; i < h.size(); ++i) acc.add(h[i], h_hat[i]);
  return acc.db();
}

/// Largest |nmse[i+1] - nmse[i]| over the grid.
inline double cliff_metric(const SweepResult& r) {
  if (r.size() < 2) throw ContractError("cliff_metric: need at least two grid points");
  double m = 0.0;
  for (std::size_t i = 0; i + 1 < r.size(); ++i) m = std::max(m, std::abs(r.nmse_db[i + 1] - r.nmse_db[i]));
  return m;
}

inline std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("grid: need lo <= hi and step > 0");
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) g.push_back(lo + static_cast<double>(i) * step);
  return g;
}

struct SweepOptions {
  Split split = Split::test;
  std::uint64_t seed = 20211;
  double snr_cap_db = 10.0;  // what the AF modules see at a noiseless (+inf) point
  NmseAveraging averaging = NmseAveraging::mean_of_ratios;
  std::size_t max_samples = 0;  // 0 = whole split
};

/// Reconstructions of a split at one SNR, in sample order.
template <typename T>
std::vector<ComplexMatrix> djscc_reconstruct(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc,
                                             double mu_db, const SweepOptions& opt, std::uint64_t point_seed) {
  DjsccPipeline<T> pipe(pc, d.manifest());
  const std::size_t n = opt.max_samples == 0 ? d.count(opt.split) : std::min(opt.max_samples, d.count(opt.split));
  std::vector<ComplexMatrix> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, opt.split, idx, pc.transform);
    std::vector<double> mu(len, mu_db);
    std::vector<std::uint64_t> seeds(len);
    for (std::size_t i = 0; i < len; ++i) seeds[i] = derive_seed(point_seed, start + i);
    const auto r = draw_batch_realization(b, mu, seeds, pc.k, pc.channel);
    std::vector<T> snr(len, static_cast<T>(network_snr(mu_db, opt.snr_cap_db)));
    const auto y = pipe.forward(model, b, snr, r, false);
    for (std::size_t i = 0; i < len; ++i) out.push_back(pipe.reconstruction().physical(y, i));
  }
  return out;
}

/// Single-sample ADJSCC/DJSCC forward: H_d, H_u, mu -> H_d_hat.
template <typename T>
ComplexMatrix djscc_forward(nn::Model<T>& model, const DatasetManifest& man, const PipelineConfig& pc, const ComplexMatrix& h_d,
                            const ComplexMatrix& h_u, SnrDb mu, std::uint64_t seed, double snr_cap_db = 10.0) {
  DjsccPipeline<T> pipe(pc, man);
  Batch<T> b;
  b.n = 1;
  b.h_down = {h_d};
  b.h_up = {h_u};
  const auto& sc = man.scenario;
  if (pc.transform == TransformKind::truncated_ad) {
    b.input = Tensor<T>(2, 1, sc.n_trunc, sc.n_tx);
    detail::store_image(b.input, 0, normalize(truncate(sf_to_ad(h_d), sc.truncation()).values, man.ad_stats, true));
  } else {
    b.input = Tensor<T>(2, 1, sc.n_sub, sc.n_tx);
    detail::store_image(b.input, 0, normalize(h_d, man.sf_stats, true));
  }
  const double m = mu.value;
  const std::uint64_t s = seed;
  const auto r = draw_batch_realization(b, std::span<const double>(&m, 1), std::span<const std::uint64_t>(&s, 1), pc.k, pc.channel);
  const T snr = static_cast<T>(network_snr(mu.value, snr_cap_db));
  const auto y = pipe.forward(model, b, std::span<const T>(&snr, 1), r, false);
  return pipe.reconstruction().physical(y, 0);
}

/// NMSE-vs-SNR of a DJSCC-family model. Grid point i uses noise seeds derived from (seed, i).
template <typename T>
SweepResult snr_sweep(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc, std::span<const double> grid,
                      const SweepOptions& opt, std::string label = {}) {
  SweepResult r;
  r.label = std::move(label);
  r.snr_grid_db.assign(grid.begin(), grid.end());
  const std::size_t n = opt.max_samples == 0 ? d.count(opt.split) : std::min(opt.max_samples, d.count(opt.split));
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const auto rec = djscc_reconstruct(model, d, pc, grid[p], opt, derive_seed(opt.seed, p));
    NmseAccumulator acc(opt.averaging);
    for (std::size_t i = 0; i < n; ++i) acc.add(d.h_down(opt.split, i), rec[i]);
    r.nmse_db.push_back(acc.db());
  }
  r.provenance = {{"model_spec_hash", nn::spec_hash(model.spec())},
                  {"dataset_hash", d.content_hash()},
                  {"split", split_name(opt.split)},
                  {"eval_seed", opt.seed},
                  {"samples", n},
                  {"averaging", opt.averaging == NmseAveraging::mean_of_ratios ? "mean_of_ratios" : "ratio_of_means"}};
  r.validate();
  return r;
}

/// NMSE (dB) of the bit-level pipeline over a split (error-free bit transport).
template <typename T>
double bitlevel_nmse(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc, const SweepOptions& opt,
                     BitPath path = BitPath::quantized) {
  BitPipeline<T> pipe(pc, d.manifest());
  const std::size_t n = opt.max_samples == 0 ? d.count(opt.split) : std::min(opt.max_samples, d.count(opt.split));
  NmseAccumulator acc(opt.averaging);
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, opt.split, idx, TransformKind::truncated_ad);
    const auto y = pipe.forward(model, b, path, false, false);
    for (std::size_t i = 0; i < len; ++i) acc.add(b.h_down[i], pipe.reconstruction().physical(y, i));
  }
  return acc.db();
}

/// Fraction of samples whose reconstruction changes when the SNR fed to the
/// networks moves by `delta_db` (channel realization held fixed).
template <typename T>
double snr_sensitivity(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc, double mu_db, double delta_db,
                       const SweepOptions& opt) {
  DjsccPipeline<T> pipe(pc, d.manifest());
  const std::size_t n = opt.max_samples == 0 ? d.count(opt.split) : std::min(opt.max_samples, d.count(opt.split));
  std::size_t changed = 0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, opt.split, idx, pc.transform);
    std::vector<double> mu(len, mu_db);
    std::vector<std::uint64_t> seeds(len);
    for (std::size_t i = 0; i < len; ++i) seeds[i] = derive_seed(opt.seed, start + i);
    const auto r = draw_batch_realization(b, mu, seeds, pc.k, pc.channel);
    std::vector<T> s0(len, static_cast<T>(mu_db)), s1(len, static_cast<T>(mu_db + delta_db));
    const auto y0 = pipe.forward(model, b, s0, r, false);
    const auto y1 = pipe.forward(model, b, s1, r, false);
    for (std::size_t i = 0; i < len; ++i) {
      bool diff = false;
      for (std::size_t ch = 0; ch < y0.c && !diff; ++ch)
        for (std::size_t e = 0; e < y0.plane(); ++e)
          if (y0.v[(ch * y0.n + i) * y0.plane() + e] != y1.v[(ch * y1.n + i) * y1.plane() + e]) {
            diff = true;
            break;
          }
      if (diff) ++changed;
    }
  }
  return static_cast<double>(changed) / static_cast<double>(n);
}

}  // namespace csi_djscc
