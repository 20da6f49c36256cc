#pragma once

// Optimization: Adam, plateau learning-rate schedule with best-on-validation
// checkpointing, end-to-end DJSCC/ADJSCC training over random SNR, and the
// three-step bit-level procedure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/pipeline.hpp"

namespace csi_djscc {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 40;
  double lr_init = 1e-3;
  double lr_floor = 1e-4;
  std::size_t plateau_patience_epochs = 5;
  SnrPolicy snr_range_db;
  LossDomain loss_domain = LossDomain::spatial_frequency;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr_init > 0.0) || !(lr_floor > 0.0) || lr_floor > lr_init) throw ConfigError("train: need 0 < lr_floor <= lr_init");
    if (plateau_patience_epochs < 1) throw ConfigError("train: plateau_patience_epochs must be >= 1");
    snr_range_db.validate();
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch_size, max_epochs, lr_init, lr_floor,
                                                plateau_patience_epochs, snr_range_db, loss_domain, seed)

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double best_val_loss = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochRecord, epoch, train_loss, val_loss, lr, best_val_loss)

struct TrainReport {
  std::string label;
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = the initial parameters were never beaten
  double wall_time_s = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainReport, label, initial_val_loss, epochs, best_epoch, wall_time_s)

/// Uniform draw on [lo, hi], or the fixed value when lo == hi.
inline SnrDb sample_snr(const SnrPolicy& p, std::mt19937_64& rng) {
  if (p.fixed()) return SnrDb{p.lo_db};
  std::uniform_real_distribution<double> u(p.lo_db, p.hi_db);
  return SnrDb{u(rng)};
}

/// Mean over the batch of ||H - H_hat||^2 on normalized tensors.
template <typename T>
T loss_e2e(const Tensor<T>& h, const Tensor<T>& h_hat) {
  return batch_loss(h_hat, h);
}

template <typename T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-7;

  Adam() = default;
  Adam(nn::ParamList<T> params, double lr) : params_(std::move(params)), lr_(lr) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }

  void step() {
    ++t_;
    const double a = lr_ * std::sqrt(1.0 - std::pow(kBeta2, t_)) / (1.0 - std::pow(kBeta1, t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = p.grad[j];
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
        p.value[j] = static_cast<T>(p.value[j] - a * m[j] / (std::sqrt(v[j]) + kEps));
      }
    }
  }

 private:
  nn::ParamList<T> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_ = 1e-3;
  double t_ = 0;
};

namespace detail {

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace detail

/// One optimization phase. `step(idx, rng)` runs forward+backward on the
/// given train indices and returns the batch loss; `validate()` returns the
/// metric used for checkpointing and the plateau schedule.
template <typename T>
struct Phase {
  std::string label;
  nn::ParamList<T> params;
  std::function<double(std::span<const std::size_t>, std::mt19937_64&)> step;
  std::function<double()> validate;
};

/// Runs a phase to completion. On return `model` holds the best-on-validation
/// parameters and `last` (if given) the final ones.
template <typename T>
TrainReport fit(nn::Model<T>& model, Phase<T>& phase, std::size_t n_train, const TrainConfig& tc, std::ostream* log = nullptr,
                nn::Model<T>* last = nullptr) {
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport rep;
  rep.label = phase.label;
  Adam<T> opt(phase.params, tc.lr_init);
  nn::Model<T> best = model;
  double best_val = phase.validate();
  if (!std::isfinite(best_val)) throw DivergenceError(phase.label + ": non-finite initial validation loss");
  rep.initial_val_loss = best_val;
  std::size_t wait = 0;
  auto order = detail::iota_indices(n_train);
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(tc.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n_train; start += tc.batch_size) {
      const std::size_t len = std::min(tc.batch_size, n_train - start);
      const double l = phase.step(std::span<const std::size_t>(order.data() + start, len), rng);
      if (!std::isfinite(l))
        throw DivergenceError(phase.label + ": non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(start / tc.batch_size));
      opt.step();
      sum += l * static_cast<double>(len);
      seen += len;
    }
    const double val = phase.validate();
    if (!std::isfinite(val)) throw DivergenceError(phase.label + ": non-finite validation loss at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, sum / static_cast<double>(seen), val, opt.lr(), 0.0};
    if (val < best_val) {
      best_val = val;
      best = model;
      rep.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= tc.plateau_patience_epochs) {
      opt.set_lr(std::max(opt.lr() * 0.5, tc.lr_floor));
      wait = 0;
    }
    rec.best_val_loss = best_val;
    rep.epochs.push_back(rec);
    if (log != nullptr)
      *log << "[" << phase.label << "] epoch " << epoch << "/" << tc.max_epochs << " train " << rec.train_loss << " val "
           << val << " lr " << rec.lr << "\n"
           << std::flush;
  }
  if (last != nullptr) *last = model;
  model = std::move(best);
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// DJSCC / ADJSCC

/// Fixed per-sample SNR and noise seeds for a split, reproducible across calls.
struct SnrSchedule {
  std::vector<double> mu_db;
  std::vector<std::uint64_t> seeds;
};

inline SnrSchedule make_schedule(std::size_t n, const SnrPolicy& p, std::uint64_t seed) {
  SnrSchedule s;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    s.mu_db.push_back(sample_snr(p, rng).value);
    s.seeds.push_back(rng());
  }
  return s;
}

inline SnrSchedule fixed_schedule(std::size_t n, double mu_db, std::uint64_t seed) {
  SnrSchedule s;
  for (std::size_t i = 0; i < n; ++i) {
    s.mu_db.push_back(mu_db);
    s.seeds.push_back(derive_seed(seed, i));
  }
  return s;
}

inline constexpr std::size_t kEvalBatch = 128;

/// Mean per-sample loss over a split under a fixed SNR/noise schedule, inference mode.
template <typename T>
double djscc_split_loss(nn::Model<T>& model, DjsccPipeline<T>& pipe, const CsiDataset& d, Split split,
                        const SnrSchedule& sched, double snr_cap_db) {
  const std::size_t n = d.count(split);
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, split, idx, pipe.config().transform);
    const std::span<const double> mu(sched.mu_db.data() + start, len);
    const auto r = draw_batch_realization(b, mu, std::span<const std::uint64_t>(sched.seeds.data() + start, len),
                                          pipe.config().k, pipe.config().channel);
    std::vector<T> snr(len);
    for (std::size_t i = 0; i < len; ++i) snr[i] = static_cast<T>(network_snr(mu[i], snr_cap_db));
    const auto out = pipe.forward(model, b, snr, r, false);
    sum += static_cast<double>(batch_loss(out, pipe.reconstruction().target(b))) * static_cast<double>(len);
  }
  return sum / static_cast<double>(n);
}

template <typename T>
struct TrainOutcome {
  nn::Model<T> last;
  TrainReport report;
};

/// End-to-end training over per-sample random SNR with noise redrawn every step.
template <typename T>
TrainOutcome<T> train(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc, const TrainConfig& tc,
                      std::ostream* log = nullptr, const std::string& label = "train") {
  tc.validate();
  DjsccPipeline<T> pipe(pc, d.manifest(), tc.loss_domain);
  const auto val_sched = make_schedule(d.count(Split::val), tc.snr_range_db, derive_seed(tc.seed, 0xA11DA7E));
  const double cap = tc.snr_range_db.hi_db;

  Phase<T> ph;
  ph.label = label;
  ph.params = model.trainable(nn::kAllGroups);
  ph.step = [&](std::span<const std::size_t> idx, std::mt19937_64& rng) {
    const auto b = make_batch<T>(d, Split::train, idx, pc.transform);
    std::vector<double> mu(b.n);
    std::vector<std::uint64_t> seeds(b.n);
    std::vector<T> snr(b.n);
    for (std::size_t i = 0; i < b.n; ++i) {
      mu[i] = sample_snr(tc.snr_range_db, rng).value;
      seeds[i] = rng();
      snr[i] = static_cast<T>(mu[i]);
    }
    const auto r = draw_batch_realization(b, mu, seeds, pc.k, pc.channel);
    model.zero_grad();
    const auto out = pipe.forward(model, b, snr, r, true);
    const auto target = pipe.reconstruction().target(b);
    const T l = batch_loss(out, target);
    pipe.backward(model, batch_loss_grad(out, target));
    return static_cast<double>(l);
  };
  ph.validate = [&] { return djscc_split_loss(model, pipe, d, Split::val, val_sched, cap); };

  TrainOutcome<T> res;
  res.report = fit(model, ph, d.count(Split::train), tc, log, &res.last);
  return res;
}

// ---------------------------------------------------------------------------
// Bit-level three-step procedure

struct BitLevelReport {
  TrainReport step1, step2, step3;
  double offset_val_mse_before = 0.0;  // dequantized codeword vs original
  double offset_val_mse_after = 0.0;   // after offset compensation
  double step2_val_nmse = 0.0;         // linear, quantized path with step-2 offset
  double step3_val_nmse = 0.0;         // linear, after fine-tuning
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BitLevelReport, step1, step2, step3, offset_val_mse_before, offset_val_mse_after,
                                   step2_val_nmse, step3_val_nmse)

struct BitLevelBudget {
  std::size_t step1_epochs = 40;
  std::size_t step2_epochs = 10;
  std::size_t step3_epochs = 10;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BitLevelBudget, step1_epochs, step2_epochs, step3_epochs)

namespace detail {

/// Mean per-sample linear NMSE of a bit-level path over a split.
template <typename T>
double bit_split_nmse(nn::Model<T>& model, BitPipeline<T>& pipe, const CsiDataset& d, Split split, BitPath path) {
  const std::size_t n = d.count(split);
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, split, idx, TransformKind::truncated_ad);
    const auto out = pipe.forward(model, b, path, false, false);
    for (std::size_t i = 0; i < len; ++i) {
      const ComplexMatrix h_hat = pipe.reconstruction().physical(out, i);
      double num = 0.0;
      for (std::size_t e = 0; e < h_hat.size(); ++e) num += std::norm(b.h_down[i].data()[e] - h_hat.data()[e]);
      sum += num / b.h_down[i].squared_norm();
    }
  }
  return sum / static_cast<double>(n);
}

template <typename T>
double bit_split_loss(nn::Model<T>& model, BitPipeline<T>& pipe, const CsiDataset& d, Split split, BitPath path) {
  const std::size_t n = d.count(split);
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, split, idx, TransformKind::truncated_ad);
    const auto out = pipe.forward(model, b, path, false, false);
    sum += static_cast<double>(batch_loss(out, pipe.reconstruction().target(b))) * static_cast<double>(len);
  }
  return sum / static_cast<double>(n);
}

/// Mean per-sample ||offset(Q(c)) - c||^2 (or ||Q(c) - c||^2 without offset) over a split.
template <typename T>
double offset_split_mse(nn::Model<T>& model, BitPipeline<T>& pipe, const CsiDataset& d, Split split, bool use_offset) {
  const std::size_t n = d.count(split);
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = make_batch<T>(d, split, idx, TransformKind::truncated_ad);
    const auto c = pipe.encode(model, b, false);
    auto q = pipe.quantize_roundtrip(c);
    if (use_offset) q = model.offset().forward(q);
    sum += static_cast<double>(batch_loss(q, c)) * static_cast<double>(len);
  }
  return sum / static_cast<double>(n);
}

}  // namespace detail

/// (1) autoencoder without quantization, (2) offset network on
/// (dequantized, original) codeword pairs, (3) encoder frozen, offset and
/// decoder fine-tuned on the reconstruction loss through the quantizer.
template <typename T>
BitLevelReport train_bitlevel(nn::Model<T>& model, const CsiDataset& d, const PipelineConfig& pc, const TrainConfig& tc,
                              const BitLevelBudget& budget, std::ostream* log = nullptr) {
  tc.validate();
  BitPipeline<T> pipe(pc, d.manifest(), tc.loss_domain);
  const std::size_t n_train = d.count(Split::train);
  BitLevelReport rep;

  // Step 1
  {
    TrainConfig c1 = tc;
    c1.max_epochs = budget.step1_epochs;
    Phase<T> ph;
    ph.label = "bit-step1";
    ph.params = model.trainable(std::array{nn::Group::theta, nn::Group::phi});
    ph.step = [&](std::span<const std::size_t> idx, std::mt19937_64&) {
      const auto b = make_batch<T>(d, Split::train, idx, TransformKind::truncated_ad);
      model.zero_grad();
      const auto out = pipe.forward(model, b, BitPath::plain, true, true);
      const auto target = pipe.reconstruction().target(b);
      const T l = batch_loss(out, target);
      pipe.backward(model, batch_loss_grad(out, target));
      return static_cast<double>(l);
    };
    ph.validate = [&] { return detail::bit_split_loss(model, pipe, d, Split::val, BitPath::plain); };
    rep.step1 = fit(model, ph, n_train, c1, log);
  }

  // Step 2
  rep.offset_val_mse_before = detail::offset_split_mse(model, pipe, d, Split::val, false);
  {
    TrainConfig c2 = tc;
    c2.max_epochs = budget.step2_epochs;
    c2.seed = derive_seed(tc.seed, 2);
    Phase<T> ph;
    ph.label = "bit-step2";
    nn::ParamList<T> off;
    model.offset().collect(off);
    ph.params = off;
    ph.step = [&](std::span<const std::size_t> idx, std::mt19937_64&) {
      const auto b = make_batch<T>(d, Split::train, idx, TransformKind::truncated_ad);
      const auto c = pipe.encode(model, b, false);
      const auto q = pipe.quantize_roundtrip(c);
      model.zero_grad();
      const auto y = model.offset().forward(q);
      const T l = batch_loss(y, c);
      model.offset().backward(batch_loss_grad(y, c));
      return static_cast<double>(l);
    };
    ph.validate = [&] { return detail::offset_split_mse(model, pipe, d, Split::val, true); };
    rep.step2 = fit(model, ph, n_train, c2, log);
  }
  rep.offset_val_mse_after = detail::offset_split_mse(model, pipe, d, Split::val, true);
  rep.step2_val_nmse = detail::bit_split_nmse(model, pipe, d, Split::val, BitPath::quantized);

  // Step 3
  {
    TrainConfig c3 = tc;
    c3.max_epochs = budget.step3_epochs;
    c3.seed = derive_seed(tc.seed, 3);
    Phase<T> ph;
    ph.label = "bit-step3";
    ph.params = model.trainable(std::array{nn::Group::phi});
    ph.step = [&](std::span<const std::size_t> idx, std::mt19937_64&) {
      const auto b = make_batch<T>(d, Split::train, idx, TransformKind::truncated_ad);
      model.zero_grad();
      const auto out = pipe.forward(model, b, BitPath::quantized, false, true);
      const auto target = pipe.reconstruction().target(b);
      const T l = batch_loss(out, target);
      pipe.backward(model, batch_loss_grad(out, target));
      return static_cast<double>(l);
    };
    ph.validate = [&] { return detail::bit_split_nmse(model, pipe, d, Split::val, BitPath::quantized); };
    rep.step3 = fit(model, ph, n_train, c3, log);
  }
  rep.step3_val_nmse = detail::bit_split_nmse(model, pipe, d, Split::val, BitPath::quantized);
  return rep;
}

}  // namespace csi_djscc
