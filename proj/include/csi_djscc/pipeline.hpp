#pragma once

// End-to-end systems: ADJSCC / DJSCC (learned encoder -> feedback channel ->
// learned decoder) and the bit-level SSCC chain (encoder -> quantizer ->
// offset network -> decoder over error-free bit transport).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/phy_channel.hpp"
#include "csi_djscc/quantization.hpp"
#include "csi_djscc/transforms.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc {

using nn::Tensor;
using nn::TransformKind;

enum class PipelineVariant { adjscc, djscc, sscc_bit, sscc_ideal };

NLOHMANN_JSON_SERIALIZE_ENUM(PipelineVariant, {{PipelineVariant::adjscc, "adjscc"},
                                               {PipelineVariant::djscc, "djscc"},
                                               {PipelineVariant::sscc_bit, "sscc_bit"},
                                               {PipelineVariant::sscc_ideal, "sscc_ideal"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ChannelMode, {{ChannelMode::awgn, "awgn"}, {ChannelMode::fading_mrc, "fading_mrc"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChannelConfig, mode, equalize_mrc, subcarrier_offset)

/// Training/evaluation SNR: a fixed value when lo == hi, otherwise uniform on [lo, hi].
struct SnrPolicy {
  double lo_db = -10.0;
  double hi_db = 10.0;

  bool fixed() const { return lo_db == hi_db; }
  void validate() const {
    if (!std::isfinite(lo_db) || !std::isfinite(hi_db) || lo_db > hi_db)
      throw ConfigError("snr policy: need finite lo <= hi");
  }
  friend bool operator==(const SnrPolicy&, const SnrPolicy&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SnrPolicy, lo_db, hi_db)

struct PipelineConfig {
  PipelineVariant variant = PipelineVariant::adjscc;
  nn::Backbone backbone = nn::Backbone::csinet;
  std::size_t k = 16;
  std::size_t m = 0;  // code dimension of sscc_bit; DJSCC variants always use 2k
  ChannelConfig channel;
  TransformKind transform = TransformKind::nonlinear;
  QuantizerSpec quantizer;
  IdealSchemeSpec ideal;

  bool is_djscc() const { return variant == PipelineVariant::adjscc || variant == PipelineVariant::djscc; }

  std::size_t code_dim() const { return is_djscc() ? 2 * k : m; }

  void validate(const ChannelScenario& sc) const {
    if (is_djscc()) {
      if (k < 1) throw ConfigError("pipeline: k must be >= 1");
      if (channel.subcarrier_offset + k > sc.n_sub)
        throw ConfigError("pipeline: subcarrier_offset + k exceeds the uplink subcarrier count");
    }
    if (transform == TransformKind::nonlinear) nn::transform_strides(sc.n_sub, sc.n_trunc);
    if (variant == PipelineVariant::sscc_bit) {
      if (m < 1) throw ConfigError("pipeline: sscc_bit needs m >= 1");
      quantizer.validate();
      if (transform != TransformKind::truncated_ad) throw ConfigError("pipeline: sscc_bit uses the truncated_ad transform");
    }
  }

  nn::ModelSpec model_spec(const ChannelScenario& sc) const {
    nn::ModelSpec s;
    s.backbone = backbone;
    s.m = code_dim();
    s.n_sub = sc.n_sub;
    s.n_trunc = sc.n_trunc;
    s.n_tx = sc.n_tx;
    s.transform = transform;
    s.adaptive = variant == PipelineVariant::adjscc;
    s.offset_net = variant == PipelineVariant::sscc_bit;
    s.codeword_act = variant == PipelineVariant::sscc_bit ? nn::Act::tanh : nn::Act::none;
    return s;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, variant, backbone, k, m, channel, transform, quantizer,
                                                ideal)

enum class LossDomain { spatial_frequency, truncated_ad };

NLOHMANN_JSON_SERIALIZE_ENUM(LossDomain, {{LossDomain::spatial_frequency, "spatial_frequency"},
                                          {LossDomain::truncated_ad, "truncated_ad"}})

/// SNR value handed to the AF modules. A noiseless point (+inf) is presented
/// as the top of the training range.
inline double network_snr(double mu_db, double cap_db) { return std::isinf(mu_db) && mu_db > 0 ? cap_db : mu_db; }

// ---------------------------------------------------------------------------
// Batches

template <typename T>
struct Batch {
  std::size_t n = 0;
  Tensor<T> input;                    // normalized network input
  std::vector<ComplexMatrix> h_down;  // physical downlink (spatial-frequency)
  std::vector<ComplexMatrix> h_up;    // physical uplink
};

namespace detail {

template <typename T>
void store_image(Tensor<T>& t, std::size_t n, const RealTensor& r) {
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < r.rows; ++i)
      for (std::size_t j = 0; j < r.cols; ++j) t.at(ch, n, i, j) = static_cast<T>(r.at(ch, i, j));
}

template <typename T>
RealTensor load_image(const Tensor<T>& t, std::size_t n) {
  RealTensor r{t.h, t.w, std::vector<double>(2 * t.h * t.w)};
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < t.h; ++i)
      for (std::size_t j = 0; j < t.w; ++j) r.at(ch, i, j) = static_cast<double>(t.at(ch, n, i, j));
  return r;
}

}  // namespace detail

/// Network input for the chosen transform. Values outside the train-split
/// range are clamped here; train-split samples are inside it by construction.
template <typename T>
Batch<T> make_batch(const CsiDataset& d, Split split, std::span<const std::size_t> idx, TransformKind transform) {
  const auto& sc = d.scenario();
  const auto& man = d.manifest();
  Batch<T> b;
  b.n = idx.size();
  const bool tad = transform == TransformKind::truncated_ad;
  b.input = Tensor<T>(2, b.n, tad ? sc.n_trunc : sc.n_sub, sc.n_tx);
  for (std::size_t i = 0; i < b.n; ++i) {
    if (idx[i] >= d.count(split)) throw ShapeError("make_batch: sample index out of range");
    b.h_down.push_back(d.h_down(split, idx[i]));
    b.h_up.push_back(d.h_up(split, idx[i]));
    if (tad)
      detail::store_image(b.input, i, normalize(truncate(sf_to_ad(b.h_down.back()), sc.truncation()).values, man.ad_stats, true));
    else
      detail::store_image(b.input, i, normalize(b.h_down.back(), man.sf_stats, true));
  }
  return b;
}

/// Mean over the batch of the per-sample squared error.
template <typename T>
T batch_loss(const Tensor<T>& out, const Tensor<T>& target) {
  if (!out.same_shape(target)) throw ShapeError("loss: shape mismatch " + out.shape_str() + " vs " + target.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    const double e = static_cast<double>(out.v[i]) - static_cast<double>(target.v[i]);
    s += e * e;
  }
  return static_cast<T>(s / static_cast<double>(out.n));
}

template <typename T>
Tensor<T> batch_loss_grad(const Tensor<T>& out, const Tensor<T>& target) {
  Tensor<T> g = out;
  const T scale = T(2) / static_cast<T>(out.n);
  for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = scale * (out.v[i] - target.v[i]);
  return g;
}

/// Maps the decoder-side output into the loss domain, and loss-domain
/// tensors back to physical CSI.
///   nonlinear transform:        output is normalized SF already
///   truncated_ad + SF loss:     denormalize(AD) -> zero_pad -> ad_to_sf -> normalize(SF)
///   truncated_ad + AD loss:     identity (target = network input)
class Reconstruction {
 public:
  Reconstruction() = default;
  Reconstruction(const DatasetManifest& man, TransformKind transform, LossDomain domain)
      : man_(man), transform_(transform), domain_(domain) {
    if (transform == TransformKind::nonlinear && domain == LossDomain::truncated_ad)
      throw ConfigError("loss domain truncated_ad requires the truncated_ad transform");
  }

  bool maps_ad_to_sf() const { return transform_ == TransformKind::truncated_ad && domain_ == LossDomain::spatial_frequency; }
  LossDomain domain() const { return domain_; }

  template <typename T>
  Tensor<T> to_loss_domain(const Tensor<T>& y) const {
    if (!maps_ad_to_sf()) return y;
    const auto& sc = man_.scenario;
    Tensor<T> out(2, y.n, sc.n_sub, sc.n_tx);
    for (std::size_t n = 0; n < y.n; ++n) {
      const AngularDelayMatrix f{denormalize(detail::load_image(y, n), man_.ad_stats), true};
      detail::store_image(out, n, normalize(ad_to_sf(zero_pad(f, sc.truncation())), man_.sf_stats));
    }
    return out;
  }

  /// Adjoint of the linear part of to_loss_domain.
  template <typename T>
  Tensor<T> backward(const Tensor<T>& d_out) const {
    if (!maps_ad_to_sf()) return d_out;
    const auto& sc = man_.scenario;
    const double gain = man_.ad_stats.range() / man_.sf_stats.range();
    Tensor<T> dy(2, d_out.n, sc.n_trunc, sc.n_tx);
    for (std::size_t n = 0; n < d_out.n; ++n) {
      const RealTensor g = detail::load_image(d_out, n);
      ComplexMatrix gc(sc.n_sub, sc.n_tx);
      for (std::size_t i = 0; i < sc.n_sub; ++i)
        for (std::size_t j = 0; j < sc.n_tx; ++j) gc(i, j) = {g.at(0, i, j), g.at(1, i, j)};
      const AngularDelayMatrix a = truncate(sf_to_ad(gc), sc.truncation());
      for (std::size_t i = 0; i < sc.n_trunc; ++i)
        for (std::size_t j = 0; j < sc.n_tx; ++j) {
          dy.at(0, n, i, j) = static_cast<T>(gain * a.values(i, j).real());
          dy.at(1, n, i, j) = static_cast<T>(gain * a.values(i, j).imag());
        }
    }
    return dy;
  }

  /// Loss-domain target for a batch.
  template <typename T>
  Tensor<T> target(const Batch<T>& b) const {
    if (transform_ == TransformKind::truncated_ad && domain_ == LossDomain::truncated_ad) return b.input;
    if (transform_ == TransformKind::nonlinear) return b.input;
    const auto& sc = man_.scenario;
    Tensor<T> t(2, b.n, sc.n_sub, sc.n_tx);
    for (std::size_t n = 0; n < b.n; ++n) detail::store_image(t, n, normalize(b.h_down[n], man_.sf_stats, true));
    return t;
  }

  /// Physical spatial-frequency CSI of sample n of a loss-domain tensor.
  template <typename T>
  ComplexMatrix physical(const Tensor<T>& out, std::size_t n) const {
    const auto& sc = man_.scenario;
    if (transform_ == TransformKind::truncated_ad && domain_ == LossDomain::truncated_ad) {
      const AngularDelayMatrix f{denormalize(detail::load_image(out, n), man_.ad_stats), true};
      return ad_to_sf(zero_pad(f, sc.truncation()));
    }
    return denormalize(detail::load_image(out, n), man_.sf_stats);
  }

 private:
  DatasetManifest man_;
  TransformKind transform_ = TransformKind::nonlinear;
  LossDomain domain_ = LossDomain::spatial_frequency;
};

/// Channel state for a batch: per-sample SNR and noise seed, uplink from the same sample pair.
template <typename T>
ChannelRealization draw_batch_realization(const Batch<T>& b, std::span<const double> mu_db, std::span<const std::uint64_t> seeds,
                                          std::size_t k, const ChannelConfig& cfg) {
  if (mu_db.size() != b.n || seeds.size() != b.n) throw ShapeError("draw_batch_realization: one SNR and seed per sample");
  ChannelRealization r = make_realization(b.n, k);
  for (std::size_t n = 0; n < b.n; ++n) draw_realization(r, n, &b.h_up[n], SnrDb{mu_db[n]}, cfg, seeds[n]);
  return r;
}

/// Largest deviation of the transmitted codeword power from k that is accepted.
inline double power_tolerance(std::size_t k) { return 1e-4 * std::max(1.0, static_cast<double>(k) / 32.0); }

// ---------------------------------------------------------------------------
// ADJSCC / DJSCC

template <typename T>
class DjsccPipeline {
 public:
  DjsccPipeline(const PipelineConfig& cfg, const DatasetManifest& man, LossDomain domain = LossDomain::spatial_frequency)
      : cfg_(cfg), recon_(man, cfg.transform, domain), channel_(cfg.channel) {
    if (!cfg.is_djscc()) throw ConfigError("DjsccPipeline: variant must be adjscc or djscc");
    cfg.validate(man.scenario);
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const Reconstruction& reconstruction() const noexcept { return recon_; }
  const FeedbackChannel<T>& channel() const noexcept { return channel_; }

  /// Loss-domain reconstruction. `snr_net` is the per-sample SNR seen by the
  /// AF modules; the realization carries the physical noise level.
  Tensor<T> forward(nn::Model<T>& model, const Batch<T>& b, std::span<const T> snr_net, const ChannelRealization& r,
                    bool training) {
    if (model.spec().m != 2 * cfg_.k) throw ConfigError("DjsccPipeline: model code dimension differs from 2k");
    const Tensor<T> c = model.encode(b.input, snr_net, training);
    Tensor<T> c_hat(c.c, c.n, 1, 1);
    channel_.forward(c.v, c_hat.v, b.n, r);
    if (channel_.last_power_error() > power_tolerance(cfg_.k))
      throw ContractError("power constraint violated: |sum|s|^2 - k| = " + std::to_string(channel_.last_power_error()));
    return recon_.to_loss_domain(model.decode(c_hat, snr_net, training));
  }

  void backward(nn::Model<T>& model, const Tensor<T>& d_out) {
    const Tensor<T> d_chat = model.decode_backward(recon_.backward(d_out));
    Tensor<T> d_c(d_chat.c, d_chat.n, 1, 1);
    channel_.backward(d_chat.v, d_c.v);
    model.encode_backward(d_c);
  }

 private:
  PipelineConfig cfg_;
  Reconstruction recon_;
  FeedbackChannel<T> channel_;
};

// ---------------------------------------------------------------------------
// Bit-level SSCC

enum class BitPath {
  plain,        // encoder -> decoder (step 1)
  quantized,    // encoder -> quantize -> dequantize -> offset -> decoder
  no_offset     // encoder -> quantize -> dequantize -> decoder
};

template <typename T>
class BitPipeline {
 public:
  BitPipeline(const PipelineConfig& cfg, const DatasetManifest& man, LossDomain domain = LossDomain::truncated_ad)
      : cfg_(cfg), recon_(man, TransformKind::truncated_ad, domain) {
    if (cfg.variant != PipelineVariant::sscc_bit) throw ConfigError("BitPipeline: variant must be sscc_bit");
    cfg.validate(man.scenario);
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const Reconstruction& reconstruction() const noexcept { return recon_; }

  Tensor<T> encode(nn::Model<T>& model, const Batch<T>& b, bool training) {
    if (model.spec().m != cfg_.m || !model.spec().offset_net) throw ConfigError("BitPipeline: model does not match the configuration");
    snr_.assign(b.n, T(0));  // no AF modules; the span only carries the batch size
    return model.encode(b.input, snr_, training);
  }

  Tensor<T> quantize_roundtrip(const Tensor<T>& c) const {
    Tensor<T> q = c;
    for (auto& v : q.v) v = static_cast<T>(level_value(quantize_one(static_cast<double>(v), cfg_.quantizer), cfg_.quantizer));
    return q;
  }

  /// The encoder and decoder side can run in different BN modes so that a
  /// frozen encoder keeps its running statistics.
  Tensor<T> forward(nn::Model<T>& model, const Batch<T>& b, BitPath path, bool encoder_training, bool decoder_training) {
    path_ = path;
    Tensor<T> c = encode(model, b, encoder_training);
    if (path != BitPath::plain) c = quantize_roundtrip(c);
    if (path == BitPath::quantized) c = model.offset().forward(c);
    return recon_.to_loss_domain(model.decode(c, snr_, decoder_training));
  }

  /// The quantizer passes no gradient; with a quantized path the encoder receives none.
  void backward(nn::Model<T>& model, const Tensor<T>& d_out) {
    Tensor<T> d = model.decode_backward(recon_.backward(d_out));
    if (path_ == BitPath::quantized) d = model.offset().backward(d);
    if (path_ == BitPath::plain) model.encode_backward(d);
  }

 private:
  PipelineConfig cfg_;
  Reconstruction recon_;
  BitPath path_ = BitPath::plain;
  std::vector<T> snr_;
};

}  // namespace csi_djscc
