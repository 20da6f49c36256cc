#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csi_djscc/errors.hpp"

namespace csi_djscc::nn {

/// Aligned storage: Eigen's vectorised reductions peel a prefix that depends on
/// the address, so unaligned buffers make sums vary from run to run.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Activation tensor stored channel-major: index ((c * N + n) * H + h) * W + w.
/// With this layout a convolution output is exactly the GEMM result
/// (C_out x N*H*W) and per-channel statistics are contiguous.
template <typename T>
struct Tensor {
  std::size_t c = 0, n = 0, h = 0, w = 0;
  Buffer<T> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t n_, std::size_t h_, std::size_t w_, T fill = T(0))
      : c(c_), n(n_), h(h_), w(w_), v(c_ * n_ * h_ * w_, fill) {}

  std::size_t size() const noexcept { return v.size(); }
  std::size_t plane() const noexcept { return h * w; }
  std::size_t per_channel() const noexcept { return n * h * w; }

  T& at(std::size_t ci, std::size_t ni, std::size_t hi, std::size_t wi) { return v[((ci * n + ni) * h + hi) * w + wi]; }
  T at(std::size_t ci, std::size_t ni, std::size_t hi, std::size_t wi) const {
    return v[((ci * n + ni) * h + hi) * w + wi];
  }

  bool same_shape(const Tensor& o) const noexcept { return c == o.c && n == o.n && h == o.h && w == o.w; }
  std::string shape_str() const {
    return "(" + std::to_string(c) + "," + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// (C, N, H, W) -> (C*H*W, N): column n is the flattened sample, feature index (c*H + h)*W + w.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  Tensor<T> y(x.c * x.h * x.w, x.n, 1, 1);
  const std::size_t hw = x.plane();
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t n = 0; n < x.n; ++n)
      for (std::size_t p = 0; p < hw; ++p) y.v[(c * hw + p) * x.n + n] = x.v[(c * x.n + n) * hw + p];
  return y;
}

/// Inverse of flatten.
template <typename T>
Tensor<T> unflatten(const Tensor<T>& y, std::size_t c, std::size_t h, std::size_t w) {
  if (y.c != c * h * w || y.h != 1 || y.w != 1) throw ShapeError("unflatten: feature count mismatch");
  Tensor<T> x(c, y.n, h, w);
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t n = 0; n < y.n; ++n)
      for (std::size_t p = 0; p < hw; ++p) x.v[(ci * y.n + n) * hw + p] = y.v[(ci * hw + p) * y.n + n];
  return x;
}

/// Channel concatenation; contiguous in this layout.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat_channels: spatial mismatch");
  Tensor<T> y(a.c + b.c, a.n, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, std::size_t first) {
  Tensor<T> a(first, y.n, y.h, y.w), b(y.c - first, y.n, y.h, y.w);
  std::copy(y.v.begin(), y.v.begin() + static_cast<std::ptrdiff_t>(a.size()), a.v.begin());
  std::copy(y.v.begin() + static_cast<std::ptrdiff_t>(a.size()), y.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

}  // namespace csi_djscc::nn
