#pragma once

// Spatial-frequency <-> angular-delay conversion, delay truncation and
// zero padding. Both directions use the unitary DFT convention (1/sqrt(N)
// on every axis), so the inverse is exact and Frobenius norm is preserved.

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "csi_djscc/errors.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc {

struct TruncationSpec {
  std::size_t n_trunc = 32;
  std::size_t n_sub = 256;
  std::size_t n_tx = 32;

  void validate() const {
    if (n_trunc < 1 || n_trunc > n_sub)
      throw ConfigError("TruncationSpec: need 1 <= n_trunc <= n_sub");
    if (n_tx < 1) throw ConfigError("TruncationSpec: n_tx must be >= 1");
  }
};

struct AngularDelayMatrix {
  ComplexMatrix values;
  bool truncated = false;
};

namespace detail {

enum class Dir { forward, inverse };

// Unitary 1-D DFT of a strided line. forward: exp(-j2pi kn/N), inverse: exp(+j2pi kn/N).
inline void unitary_dft_lines(ComplexMatrix& m, bool along_rows, Dir dir) {
  thread_local Eigen::FFT<double> fft;
  const std::size_t n = along_rows ? m.cols() : m.rows();
  if (n == 1) return;  // kissfft faults on length 1; the unitary DFT is the identity there
  const std::size_t lines = along_rows ? m.rows() : m.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<cplx> in(n), out(n);
  for (std::size_t l = 0; l < lines; ++l) {
    for (std::size_t i = 0; i < n; ++i) in[i] = along_rows ? m(l, i) : m(i, l);
    if (dir == Dir::forward) {
      fft.fwd(out, in);
      for (auto& v : out) v *= scale;
    } else {
      // Eigen's inverse already divides by N; undo half of it.
      fft.inv(out, in);
      const double fix = std::sqrt(static_cast<double>(n));
      for (auto& v : out) v *= fix;
    }
    for (std::size_t i = 0; i < n; ++i) (along_rows ? m(l, i) : m(i, l)) = out[i];
  }
}

}  // namespace detail

/// F = I_d H D_a: unitary IDFT over subcarriers (columns), unitary DFT over antennas (rows).
inline AngularDelayMatrix sf_to_ad(const ComplexMatrix& h) {
  if (h.rows() == 0 || h.cols() == 0) throw ShapeError("sf_to_ad: empty matrix");
  AngularDelayMatrix f{h, false};
  detail::unitary_dft_lines(f.values, /*along_rows=*/false, detail::Dir::inverse);
  detail::unitary_dft_lines(f.values, /*along_rows=*/true, detail::Dir::forward);
  return f;
}

inline AngularDelayMatrix sf_to_ad(const ComplexMatrix& h, const TruncationSpec& spec) {
  if (h.rows() != spec.n_sub || h.cols() != spec.n_tx)
    throw ShapeError("sf_to_ad: matrix shape does not match TruncationSpec");
  return sf_to_ad(h);
}

/// Inverse of sf_to_ad. Requires a full-size matrix.
inline ComplexMatrix ad_to_sf(const AngularDelayMatrix& f) {
  if (f.truncated) throw ContractError("ad_to_sf: input is truncated; zero_pad it first");
  ComplexMatrix h = f.values;
  if (h.rows() == 0 || h.cols() == 0) throw ShapeError("ad_to_sf: empty matrix");
  detail::unitary_dft_lines(h, /*along_rows=*/false, detail::Dir::forward);
  detail::unitary_dft_lines(h, /*along_rows=*/true, detail::Dir::inverse);
  return h;
}

/// Keeps the first n_trunc delay rows.
inline AngularDelayMatrix truncate(const AngularDelayMatrix& f, const TruncationSpec& spec) {
  spec.validate();
  if (f.truncated) throw ContractError("truncate: matrix already truncated");
  if (f.values.rows() != spec.n_sub || f.values.cols() != spec.n_tx)
    throw ShapeError("truncate: matrix shape does not match TruncationSpec");
  AngularDelayMatrix out{ComplexMatrix(spec.n_trunc, spec.n_tx), true};
  for (std::size_t r = 0; r < spec.n_trunc; ++r)
    for (std::size_t c = 0; c < spec.n_tx; ++c) out.values(r, c) = f.values(r, c);
  return out;
}

/// Appends (n_sub - n_trunc) zero rows.
inline AngularDelayMatrix zero_pad(const AngularDelayMatrix& f, const TruncationSpec& spec) {
  spec.validate();
  if (!f.truncated) throw ContractError("zero_pad: matrix is not truncated");
  if (f.values.rows() != spec.n_trunc || f.values.cols() != spec.n_tx)
    throw ShapeError("zero_pad: matrix shape does not match TruncationSpec");
  AngularDelayMatrix out{ComplexMatrix(spec.n_sub, spec.n_tx), false};
  for (std::size_t r = 0; r < spec.n_trunc; ++r)
    for (std::size_t c = 0; c < spec.n_tx; ++c) out.values(r, c) = f.values(r, c);
  return out;
}

/// Fraction of angular-delay energy inside the first n_trunc delay rows.
inline double retained_energy_fraction(const AngularDelayMatrix& f, std::size_t n_trunc) {
  if (f.truncated) throw ContractError("retained_energy_fraction: needs full-size matrix");
  double kept = 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < f.values.rows(); ++r) {
    for (std::size_t c = 0; c < f.values.cols(); ++c) {
      const double e = std::norm(f.values(r, c));
      total += e;
      if (r < n_trunc) kept += e;
    }
  }
  if (total <= 0.0) throw DegenerateError("retained_energy_fraction: zero-energy matrix");
  return kept / total;
}

}  // namespace csi_djscc
