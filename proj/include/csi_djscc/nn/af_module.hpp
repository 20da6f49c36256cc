#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/layers.hpp"
#include "csi_djscc/nn/tensor.hpp"

namespace csi_djscc::nn {

struct AFModuleSpec {
  std::size_t n_channels = 1;
  std::size_t hidden_width = 1;  // 0 means "same as n_channels"

  std::size_t hidden() const { return hidden_width == 0 ? n_channels : hidden_width; }
  void validate() const {
    if (n_channels < 1 || hidden() < 1) throw ConfigError("AFModuleSpec: widths must be >= 1");
  }
  /// Closed-form trainable parameter count.
  std::size_t param_count() const {
    const std::size_t c = n_channels, h = hidden();
    return (c + 1) * h + h + h * c + c;
  }
};

/// SNR-conditioned channel gate: global average pool -> append SNR (dB) ->
/// FC + ReLU -> FC + sigmoid -> per-channel scale in (0, 1) applied to the input.
template <typename T>
class AFModule {
 public:
  AFModule() = default;
  AFModule(const std::string& name, AFModuleSpec spec, std::mt19937_64& rng)
      : spec_(spec),
        fc1_(name + ".fc1", spec.n_channels + 1, spec.hidden(), rng),
        relu_(name + ".relu", Act::relu, spec.hidden()),
        fc2_(name + ".fc2", spec.hidden(), spec.n_channels, rng),
        gate_(name + ".gate", Act::sigmoid, spec.n_channels) {
    spec_.validate();
  }

  const AFModuleSpec& spec() const noexcept { return spec_; }
  Dense<T>& fc1() noexcept { return fc1_; }
  Dense<T>& fc2() noexcept { return fc2_; }

  /// Per-channel scales of the last forward pass, (C x N).
  const Tensor<T>& last_scales() const noexcept { return scale_; }

  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr_db) {
    const std::size_t c = spec_.n_channels;
    if (x.c != c) throw ShapeError("AFModule: expected " + std::to_string(c) + " channels, got " + x.shape_str());
    if (snr_db.size() != x.n) throw ShapeError("AFModule: one SNR value per sample required");
    x_ = x.v;
    const std::size_t hw = x.plane();
    Tensor<T> ctx(c + 1, x.n, 1, 1);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t n = 0; n < x.n; ++n) {
        const T* p = x.v.data() + (ci * x.n + n) * hw;
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        ctx.v[ci * x.n + n] = s / static_cast<T>(hw);
      }
    for (std::size_t n = 0; n < x.n; ++n) ctx.v[c * x.n + n] = snr_db[n];
    scale_ = gate_.forward(fc2_.forward(relu_.forward(fc1_.forward(ctx))));
    Tensor<T> y = x;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t n = 0; n < x.n; ++n) {
        const T s = scale_.v[ci * x.n + n];
        T* p = y.v.data() + (ci * x.n + n) * hw;
        for (std::size_t i = 0; i < hw; ++i) p[i] *= s;
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t c = spec_.n_channels, batch = dy.n, hw = dy.plane();
    Tensor<T> dx = dy;
    Tensor<T> dscale(c, batch, 1, 1);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t n = 0; n < batch; ++n) {
        const T s = scale_.v[ci * batch + n];
        const std::size_t off = (ci * batch + n) * hw;
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          acc += dy.v[off + i] * x_[off + i];
          dx.v[off + i] *= s;
        }
        dscale.v[ci * batch + n] = acc;
      }
    const Tensor<T> dctx = fc1_.backward(relu_.backward(fc2_.backward(gate_.backward(dscale))));
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t n = 0; n < batch; ++n) {
        const T g = dctx.v[ci * batch + n] / static_cast<T>(hw);
        T* p = dx.v.data() + (ci * batch + n) * hw;
        for (std::size_t i = 0; i < hw; ++i) p[i] += g;
      }
    return dx;
  }

  void collect(ParamList<T>& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }

 private:
  AFModuleSpec spec_;
  Dense<T> fc1_;
  Activation<T> relu_;
  Dense<T> fc2_;
  Activation<T> gate_;
  Tensor<T> scale_;
  Buffer<T> x_;
};

}  // namespace csi_djscc::nn
