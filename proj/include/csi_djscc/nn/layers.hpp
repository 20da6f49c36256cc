#pragma once

// Layers with explicit forward/backward. Each layer caches what its backward
// pass needs from the most recent forward call; a layer instance therefore
// serves one batch at a time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/tensor.hpp"

namespace csi_djscc::nn {

template <typename T>
struct Param {
  std::string name;
  Buffer<T> value;
  Buffer<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string nm, std::size_t n, bool train = true)
      : name(std::move(nm)), value(n, T(0)), grad(n, T(0)), trainable(train) {}
  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
void glorot_uniform(Buffer<T>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& x : w) x = static_cast<T>(u(rng));
}

// ---------------------------------------------------------------------------
// im2col / col2im

struct ConvGeom {
  std::size_t cin = 1, hin = 1, win = 1;
  std::size_t kh = 1, kw = 1, sh = 1, sw = 1, ph = 0, pw = 0;
  std::size_t hout = 1, wout = 1;

  std::size_t k_rows() const { return cin * kh * kw; }
};

/// col is (cin*kh*kw) x (N*hout*wout), row-major.
template <typename T>
void im2col(const T* x, std::size_t batch, const ConvGeom& g, T* col) {
  const std::size_t p = batch * g.hout * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = x + (c * batch + n) * g.hin * g.win;
          for (std::size_t oh = 0; oh < g.hout; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.hin)) {
              std::fill(dst, dst + g.wout, T(0));
              dst += g.wout;
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(ih) * g.win;
            for (std::size_t ow = 0; ow < g.wout; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
              *dst++ = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.win)) ? T(0) : srow[iw];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates col into x (x must be zeroed by the caller).
template <typename T>
void col2im(const T* col, std::size_t batch, const ConvGeom& g, T* x) {
  const std::size_t p = batch * g.hout * g.wout;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t n = 0; n < batch; ++n) {
          T* dst = x + (c * batch + n) * g.hin * g.win;
          for (std::size_t oh = 0; oh < g.hout; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.hin)) {
              src += g.wout;
              continue;
            }
            T* drow = dst + static_cast<std::size_t>(ih) * g.win;
            for (std::size_t ow = 0; ow < g.wout; ++ow, ++src) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.win)) drow[iw] += *src;
            }
          }
        }
      }
    }
  }
}

struct Kernel {
  std::size_t kh = 3, kw = 3;
  std::size_t sh = 1, sw = 1;
};

// ---------------------------------------------------------------------------

/// 2-D convolution with "same"-style padding (k-1)/2 on each axis.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t cin, std::size_t cout, Kernel k, std::mt19937_64& rng)
      : cin_(cin), cout_(cout), k_(k),
        weight_(name + ".weight", cout * cin * k.kh * k.kw),
        bias_(name + ".bias", cout) {
    glorot_uniform(weight_.value, cin * k.kh * k.kw, cout * k.kh * k.kw, rng);
  }

  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

  ConvGeom geometry(std::size_t h, std::size_t w) const {
    ConvGeom g{cin_, h, w, k_.kh, k_.kw, k_.sh, k_.sw, (k_.kh - 1) / 2, (k_.kw - 1) / 2, 0, 0};
    if (h + 2 * g.ph < g.kh || w + 2 * g.pw < g.kw) throw ShapeError("Conv2d: input smaller than kernel");
    g.hout = (h + 2 * g.ph - g.kh) / g.sh + 1;
    g.wout = (w + 2 * g.pw - g.kw) / g.sw + 1;
    return g;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != cin_) throw ShapeError("Conv2d: expected " + std::to_string(cin_) + " channels, got " + x.shape_str());
    g_ = geometry(x.h, x.w);
    batch_ = x.n;
    const std::size_t p = batch_ * g_.hout * g_.wout;
    col_.resize(g_.k_rows() * p);
    im2col(x.v.data(), batch_, g_, col_.data());
    Tensor<T> y(cout_, batch_, g_.hout, g_.wout);
    MatMap<T> ym(y.v.data(), cout_, p);
    ym.noalias() = ConstMatMap<T>(weight_.value.data(), cout_, g_.k_rows()) * ConstMatMap<T>(col_.data(), g_.k_rows(), p);
    for (std::size_t c = 0; c < cout_; ++c) ym.row(c).array() += bias_.value[c];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    const std::size_t p = batch_ * g_.hout * g_.wout;
    ConstMatMap<T> dym(dy.v.data(), cout_, p);
    ConstMatMap<T> colm(col_.data(), g_.k_rows(), p);
    MatMap<T>(weight_.grad.data(), cout_, g_.k_rows()).noalias() += dym * colm.transpose();
    for (std::size_t c = 0; c < cout_; ++c) bias_.grad[c] += dym.row(c).sum();
    Tensor<T> dx(cin_, batch_, g_.hin, g_.win);
    if (!need_input_grad) return dx;
    dcol_.resize(g_.k_rows() * p);
    MatMap<T>(dcol_.data(), g_.k_rows(), p).noalias() =
        ConstMatMap<T>(weight_.value.data(), cout_, g_.k_rows()).transpose() * dym;
    col2im(dcol_.data(), batch_, g_, dx.v.data());
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t cin_ = 0, cout_ = 0;
  Kernel k_;
  Param<T> weight_, bias_;
  ConvGeom g_;
  std::size_t batch_ = 0;
  Buffer<T> col_, dcol_;
};

/// Transposed convolution; output spatial size = input size * stride.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, std::size_t cin, std::size_t cout, Kernel k, std::mt19937_64& rng)
      : cin_(cin), cout_(cout), k_(k),
        weight_(name + ".weight", cin * cout * k.kh * k.kw),
        bias_(name + ".bias", cout) {
    glorot_uniform(weight_.value, cin * k.kh * k.kw, cout * k.kh * k.kw, rng);
  }

  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

  // Geometry of the equivalent forward convolution mapping output -> input.
  ConvGeom geometry(std::size_t h, std::size_t w) const {
    ConvGeom g{cout_, h * k_.sh, w * k_.sw, k_.kh, k_.kw, k_.sh, k_.sw, (k_.kh - 1) / 2, (k_.kw - 1) / 2, h, w};
    if ((g.hin + 2 * g.ph - g.kh) / g.sh + 1 != h || (g.win + 2 * g.pw - g.kw) / g.sw + 1 != w)
      throw ShapeError("ConvTranspose2d: kernel/stride combination is not invertible for this input");
    return g;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != cin_) throw ShapeError("ConvTranspose2d: channel mismatch, got " + x.shape_str());
    g_ = geometry(x.h, x.w);
    batch_ = x.n;
    x_ = x.v;
    const std::size_t p = batch_ * x.h * x.w;
    const std::size_t kr = g_.k_rows();
    col_.resize(kr * p);
    MatMap<T>(col_.data(), kr, p).noalias() =
        ConstMatMap<T>(weight_.value.data(), cin_, kr).transpose() * ConstMatMap<T>(x.v.data(), cin_, p);
    Tensor<T> y(cout_, batch_, g_.hin, g_.win);
    col2im(col_.data(), batch_, g_, y.v.data());
    const std::size_t pc = y.per_channel();
    for (std::size_t c = 0; c < cout_; ++c)
      for (std::size_t i = 0; i < pc; ++i) y.v[c * pc + i] += bias_.value[c];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    const std::size_t p = batch_ * g_.hout * g_.wout;
    const std::size_t kr = g_.k_rows();
    col_.resize(kr * p);
    im2col(dy.v.data(), batch_, g_, col_.data());
    ConstMatMap<T> colm(col_.data(), kr, p);
    MatMap<T>(weight_.grad.data(), cin_, kr).noalias() += ConstMatMap<T>(x_.data(), cin_, p) * colm.transpose();
    const std::size_t pc = dy.per_channel();
    for (std::size_t c = 0; c < cout_; ++c) {
      T s = 0;
      for (std::size_t i = 0; i < pc; ++i) s += dy.v[c * pc + i];
      bias_.grad[c] += s;
    }
    Tensor<T> dx(cin_, batch_, g_.hout, g_.wout);
    if (!need_input_grad) return dx;
    MatMap<T>(dx.v.data(), cin_, p).noalias() = ConstMatMap<T>(weight_.value.data(), cin_, kr) * colm;
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t cin_ = 0, cout_ = 0;
  Kernel k_;
  Param<T> weight_, bias_;
  ConvGeom g_;
  std::size_t batch_ = 0;
  Buffer<T> x_, col_;
};

/// Per-channel batch normalization; running statistics use momentum 0.99.
template <typename T>
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.99;
  static constexpr double kEps = 1e-3;

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t c)
      : c_(c),
        gamma_(name + ".gamma", c),
        beta_(name + ".beta", c),
        mean_(name + ".running_mean", c, false),
        var_(name + ".running_var", c, false) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(var_.value.begin(), var_.value.end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.c != c_) throw ShapeError("BatchNorm: channel mismatch " + x.shape_str());
    training_ = training;
    const std::size_t m = x.per_channel();
    Tensor<T> y = x;
    xhat_.resize(x.size());
    inv_std_.assign(c_, T(0));
    for (std::size_t c = 0; c < c_; ++c) {
      const T* xc = x.v.data() + c * m;
      T mean, var;
      if (training) {
        double s = 0, s2 = 0;
        for (std::size_t i = 0; i < m; ++i) s += xc[i];
        const double mu = s / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) s2 += (xc[i] - mu) * (xc[i] - mu);
        mean = static_cast<T>(mu);
        var = static_cast<T>(s2 / static_cast<double>(m));
        mean_.value[c] = static_cast<T>(kMomentum * mean_.value[c] + (1.0 - kMomentum) * mean);
        var_.value[c] = static_cast<T>(kMomentum * var_.value[c] + (1.0 - kMomentum) * var);
      } else {
        mean = mean_.value[c];
        var = var_.value[c];
      }
      const T inv = T(1) / std::sqrt(var + static_cast<T>(kEps));
      inv_std_[c] = inv;
      const T g = gamma_.value[c], b = beta_.value[c];
      T* xh = xhat_.data() + c * m;
      T* yc = y.v.data() + c * m;
      for (std::size_t i = 0; i < m; ++i) {
        xh[i] = (xc[i] - mean) * inv;
        yc[i] = g * xh[i] + b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t m = dy.per_channel();
    Tensor<T> dx(dy.c, dy.n, dy.h, dy.w);
    for (std::size_t c = 0; c < c_; ++c) {
      const T* d = dy.v.data() + c * m;
      const T* xh = xhat_.data() + c * m;
      T sum_d = 0, sum_dx = 0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_d += d[i];
        sum_dx += d[i] * xh[i];
      }
      gamma_.grad[c] += sum_dx;
      beta_.grad[c] += sum_d;
      const T g = gamma_.value[c];
      T* o = dx.v.data() + c * m;
      if (training_) {
        const T scale = g * inv_std_[c] / static_cast<T>(m);
        const T mt = static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i) o[i] = scale * (mt * d[i] - sum_d - xh[i] * sum_dx);
      } else {
        for (std::size_t i = 0; i < m; ++i) o[i] = d[i] * g * inv_std_[c];
      }
    }
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&mean_);
    out.push_back(&var_);
  }

 private:
  std::size_t c_ = 0;
  Param<T> gamma_, beta_, mean_, var_;
  bool training_ = true;
  Buffer<T> xhat_, inv_std_;
};

enum class Act { none, prelu, leaky, relu, sigmoid, tanh };

/// Pointwise activation. PReLU carries one learnable slope per channel
/// (initialized to 0.25); LeakyReLU uses the fixed slope 0.3.
template <typename T>
class Activation {
 public:
  static constexpr double kLeakySlope = 0.3;

  Activation() = default;
  Activation(std::string name, Act kind, std::size_t channels) : kind_(kind) {
    if (kind_ == Act::prelu) {
      alpha_ = Param<T>(name + ".alpha", channels);
      std::fill(alpha_.value.begin(), alpha_.value.end(), T(0.25));
    }
  }

  Act kind() const noexcept { return kind_; }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    if (kind_ == Act::none) return y;
    const std::size_t m = x.per_channel();
    switch (kind_) {
      case Act::prelu:
        x_ = x.v;
        for (std::size_t c = 0; c < x.c; ++c) {
          const T a = alpha_.value[c];
          for (std::size_t i = c * m; i < (c + 1) * m; ++i)
            if (y.v[i] < T(0)) y.v[i] *= a;
        }
        break;
      case Act::leaky:
        x_ = x.v;
        for (auto& v : y.v)
          if (v < T(0)) v *= static_cast<T>(kLeakySlope);
        break;
      case Act::relu:
        x_ = x.v;
        for (auto& v : y.v) v = std::max(v, T(0));
        break;
      case Act::sigmoid:
        for (auto& v : y.v) v = T(1) / (T(1) + std::exp(-v));
        y_ = y.v;
        break;
      case Act::tanh:
        for (auto& v : y.v) v = std::tanh(v);
        y_ = y.v;
        break;
      case Act::none: break;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    if (kind_ == Act::none) return dx;
    const std::size_t m = dy.per_channel();
    switch (kind_) {
      case Act::prelu:
        for (std::size_t c = 0; c < dy.c; ++c) {
          const T a = alpha_.value[c];
          T ga = 0;
          for (std::size_t i = c * m; i < (c + 1) * m; ++i) {
            if (x_[i] < T(0)) {
              ga += dy.v[i] * x_[i];
              dx.v[i] *= a;
            }
          }
          alpha_.grad[c] += ga;
        }
        break;
      case Act::leaky:
        for (std::size_t i = 0; i < dx.v.size(); ++i)
          if (x_[i] < T(0)) dx.v[i] *= static_cast<T>(kLeakySlope);
        break;
      case Act::relu:
        for (std::size_t i = 0; i < dx.v.size(); ++i)
          if (x_[i] <= T(0)) dx.v[i] = T(0);
        break;
      case Act::sigmoid:
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= y_[i] * (T(1) - y_[i]);
        break;
      case Act::tanh:
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= T(1) - y_[i] * y_[i];
        break;
      case Act::none: break;
    }
    return dx;
  }

  void collect(ParamList<T>& out) {
    if (kind_ == Act::prelu) out.push_back(&alpha_);
  }

 private:
  Act kind_ = Act::none;
  Param<T> alpha_;
  Buffer<T> x_, y_;
};

/// Fully connected layer on (features x N) tensors.
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng)
      : in_(in), out_(out), weight_(name + ".weight", out * in), bias_(name + ".bias", out) {
    glorot_uniform(weight_.value, in, out, rng);
  }

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != in_ || x.h != 1 || x.w != 1) throw ShapeError("Dense: expected (" + std::to_string(in_) + ",N,1,1), got " + x.shape_str());
    x_ = x.v;
    batch_ = x.n;
    Tensor<T> y(out_, batch_, 1, 1);
    MatMap<T> ym(y.v.data(), out_, batch_);
    ym.noalias() = ConstMatMap<T>(weight_.value.data(), out_, in_) * ConstMatMap<T>(x.v.data(), in_, batch_);
    for (std::size_t o = 0; o < out_; ++o) ym.row(o).array() += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    ConstMatMap<T> dym(dy.v.data(), out_, batch_);
    MatMap<T>(weight_.grad.data(), out_, in_).noalias() += dym * ConstMatMap<T>(x_.data(), in_, batch_).transpose();
    for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dym.row(o).sum();
    Tensor<T> dx(in_, batch_, 1, 1);
    MatMap<T>(dx.v.data(), in_, batch_).noalias() = ConstMatMap<T>(weight_.value.data(), out_, in_).transpose() * dym;
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  Buffer<T> x_;
  std::size_t batch_ = 0;
};

}  // namespace csi_djscc::nn
