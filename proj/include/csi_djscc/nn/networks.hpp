#pragma once

// Analysis/synthesis transform networks, SC-CSI encoder/decoder backbones
// and the bit-level offset network.

#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/af_module.hpp"
#include "csi_djscc/nn/layers.hpp"
#include "csi_djscc/nn/tensor.hpp"

namespace csi_djscc::nn {

enum class Backbone { csinet, csinet_plus, crnet };

inline const char* backbone_name(Backbone b) {
  switch (b) {
    case Backbone::csinet: return "csinet";
    case Backbone::csinet_plus: return "csinet_plus";
    case Backbone::crnet: return "crnet";
  }
  return "?";
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "csinet") return Backbone::csinet;
  if (s == "csinet_plus") return Backbone::csinet_plus;
  if (s == "crnet") return Backbone::crnet;
  throw ConfigError("unknown backbone '" + s + "'");
}

/// One main layer and its post-ops: conv (or transposed conv) -> [BN] -> activation -> [AF].
template <typename T>
class Stage {
 public:
  struct Options {
    std::size_t cin = 2, cout = 2;
    Kernel kernel{};
    bool transposed = false;
    bool batch_norm = true;
    Act act = Act::leaky;
    bool af = false;
    std::size_t af_hidden = 0;
    bool zero_init = false;
  };

  Stage() = default;
  Stage(const std::string& name, const Options& o, std::mt19937_64& rng) : opt_(o) {
    if (o.transposed)
      tconv_ = ConvTranspose2d<T>(name + ".tconv", o.cin, o.cout, o.kernel, rng);
    else
      conv_ = Conv2d<T>(name + ".conv", o.cin, o.cout, o.kernel, rng);
    if (o.zero_init) {
      auto& w = o.transposed ? tconv_.weight() : conv_.weight();
      std::fill(w.value.begin(), w.value.end(), T(0));
    }
    if (o.batch_norm) bn_ = BatchNorm<T>(name + ".bn", o.cout);
    act_ = Activation<T>(name + ".act", o.act, o.cout);
    if (o.af) af_ = AFModule<T>(name + ".af", AFModuleSpec{o.cout, o.af_hidden}, rng);
  }

  const Options& options() const noexcept { return opt_; }
  bool has_af() const noexcept { return opt_.af; }
  AFModule<T>& af() { return af_; }

  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr, bool training) {
    Tensor<T> y = opt_.transposed ? tconv_.forward(x) : conv_.forward(x);
    if (opt_.batch_norm) y = bn_.forward(y, training);
    y = act_.forward(y);
    if (opt_.af) y = af_.forward(y, snr);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    Tensor<T> d = opt_.af ? af_.backward(dy) : dy;
    d = act_.backward(d);
    if (opt_.batch_norm) d = bn_.backward(d);
    return opt_.transposed ? tconv_.backward(d, need_input_grad) : conv_.backward(d, need_input_grad);
  }

  void collect_main(ParamList<T>& out) {
    if (opt_.transposed)
      tconv_.collect(out);
    else
      conv_.collect(out);
    if (opt_.batch_norm) bn_.collect(out);
    act_.collect(out);
  }
  void collect_af(ParamList<T>& out) {
    if (opt_.af) af_.collect(out);
  }

 private:
  Options opt_;
  Conv2d<T> conv_;
  ConvTranspose2d<T> tconv_;
  BatchNorm<T> bn_;
  Activation<T> act_;
  AFModule<T> af_;
};

/// Vertical strides for a total downsampling factor spread over three stages.
inline std::vector<std::size_t> transform_strides(std::size_t n_sub, std::size_t n_trunc) {
  if (n_trunc == 0 || n_sub % n_trunc != 0)
    throw ConfigError("transform network: N_c must be divisible by N_c' (indivisible stride factor)");
  std::size_t f = n_sub / n_trunc;
  std::vector<std::size_t> s;
  for (int i = 0; i < 3; ++i) {
    if (f > 1) {
      if (f % 2 != 0) throw ConfigError("transform network: stride factor must be a power of two");
      s.push_back(2);
      f /= 2;
    } else {
      s.push_back(1);
    }
  }
  if (f != 1) throw ConfigError("transform network: stride factor exceeds 8 (three stride-2 stages)");
  return s;
}

struct TransformNetSpec {
  std::size_t n_sub = 256, n_trunc = 32, n_tx = 32;
  std::size_t width1 = 32, width2 = 32;
  std::size_t kernel = 3;
  bool adaptive = true;
  std::size_t af_hidden = 0;
};

/// Analysis transform: (2, N, N_c, N_t) -> (2, N, N_c', N_t), sigmoid output.
template <typename T>
class AnalysisTransform {
 public:
  AnalysisTransform() = default;
  AnalysisTransform(const TransformNetSpec& s, std::mt19937_64& rng) : spec_(s) {
    const auto st = transform_strides(s.n_sub, s.n_trunc);
    const std::size_t widths[3] = {s.width1, s.width2, 2};
    std::size_t cin = 2;
    for (std::size_t i = 0; i < 3; ++i) {
      typename Stage<T>::Options o;
      o.cin = cin;
      o.cout = widths[i];
      o.kernel = {s.kernel, s.kernel, st[i], 1};
      const bool last = i == 2;
      o.batch_norm = !last;
      o.act = last ? Act::sigmoid : Act::prelu;
      o.af = s.adaptive && !last;
      o.af_hidden = s.af_hidden;
      stages_.emplace_back("atn." + std::to_string(i), o, rng);
      cin = widths[i];
    }
  }

  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr, bool training) {
    if (x.c != 2 || x.h != spec_.n_sub || x.w != spec_.n_tx)
      throw ShapeError("ATN: expected (2,N," + std::to_string(spec_.n_sub) + "," + std::to_string(spec_.n_tx) +
                       "), got " + x.shape_str());
    Tensor<T> y = x;
    for (auto& s : stages_) y = s.forward(y, snr, training);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = false) {
    Tensor<T> d = dy;
    for (std::size_t i = stages_.size(); i-- > 0;) d = stages_[i].backward(d, i > 0 || need_input_grad);
    return d;
  }

  std::vector<Stage<T>>& stages() { return stages_; }
  void collect_main(ParamList<T>& o) { for (auto& s : stages_) s.collect_main(o); }
  void collect_af(ParamList<T>& o) { for (auto& s : stages_) s.collect_af(o); }

 private:
  TransformNetSpec spec_;
  std::vector<Stage<T>> stages_;
};

/// Synthesis transform: (2, N, N_c', N_t) -> (2, N, N_c, N_t), transposed convolutions, sigmoid output.
template <typename T>
class SynthesisTransform {
 public:
  SynthesisTransform() = default;
  SynthesisTransform(const TransformNetSpec& s, std::mt19937_64& rng) : spec_(s) {
    auto st = transform_strides(s.n_sub, s.n_trunc);
    std::reverse(st.begin(), st.end());
    const std::size_t widths[3] = {s.width1, s.width2, 2};
    std::size_t cin = 2;
    for (std::size_t i = 0; i < 3; ++i) {
      typename Stage<T>::Options o;
      o.cin = cin;
      o.cout = widths[i];
      o.kernel = {s.kernel, s.kernel, st[i], 1};
      o.transposed = true;
      const bool last = i == 2;
      o.batch_norm = !last;
      o.act = last ? Act::sigmoid : Act::prelu;
      o.af = s.adaptive && !last;
      o.af_hidden = s.af_hidden;
      stages_.emplace_back("stn." + std::to_string(i), o, rng);
      cin = widths[i];
    }
  }

  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr, bool training) {
    if (x.c != 2 || x.h != spec_.n_trunc || x.w != spec_.n_tx) throw ShapeError("STN: unexpected input " + x.shape_str());
    Tensor<T> y = x;
    for (auto& s : stages_) y = s.forward(y, snr, training);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = dy;
    for (std::size_t i = stages_.size(); i-- > 0;) d = stages_[i].backward(d);
    return d;
  }

  std::vector<Stage<T>>& stages() { return stages_; }
  void collect_main(ParamList<T>& o) { for (auto& s : stages_) s.collect_main(o); }
  void collect_af(ParamList<T>& o) { for (auto& s : stages_) s.collect_af(o); }

 private:
  TransformNetSpec spec_;
  std::vector<Stage<T>> stages_;
};

struct BackboneSpec {
  Backbone variant = Backbone::csinet;
  std::size_t m = 64;
  std::size_t n_trunc = 32;  // input rows
  std::size_t n_tx = 32;     // input cols
  bool adaptive = true;
  std::size_t af_hidden = 0;
  Act codeword_act = Act::none;

  std::size_t input_size() const { return 2 * n_trunc * n_tx; }
  void validate() const {
    if (m < 1) throw ConfigError("BackboneSpec: m must be >= 1");
    if (n_trunc < 1 || n_tx < 1) throw ConfigError("BackboneSpec: empty input shape");
  }
};

namespace detail {

template <typename T>
typename Stage<T>::Options stage_opts(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
                                      const BackboneSpec& s, bool adaptive_here = true) {
  typename Stage<T>::Options o;
  o.cin = cin;
  o.cout = cout;
  o.kernel = {kh, kw, 1, 1};
  o.batch_norm = true;
  o.act = Act::leaky;
  o.af = s.adaptive && adaptive_here;
  o.af_hidden = s.af_hidden;
  return o;
}

template <typename T>
typename Stage<T>::Options residual_out(std::size_t cin) {
  typename Stage<T>::Options o;
  o.cin = cin;
  o.cout = 2;
  o.kernel = {1, 1, 1, 1};
  o.batch_norm = false;
  o.act = Act::none;
  o.af = false;
  o.zero_init = true;
  return o;
}

/// Stacks of stages combined in one of two ways:
///   chain   - stages applied in order
///   dual    - branch A and branch B on the same input, concatenated, then a fuse stage
template <typename T>
class StageGraph {
 public:
  StageGraph() = default;
  explicit StageGraph(std::vector<Stage<T>> a) : a_(std::move(a)) {}
  StageGraph(std::vector<Stage<T>> a, std::vector<Stage<T>> b, Stage<T> fuse)
      : a_(std::move(a)), b_(std::move(b)), fuse_(std::move(fuse)), dual_(true) {}

  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr, bool training) {
    Tensor<T> ya = x;
    for (auto& s : a_) ya = s.forward(ya, snr, training);
    if (!dual_) return ya;
    Tensor<T> yb = x;
    for (auto& s : b_) yb = s.forward(yb, snr, training);
    split_ = ya.c;
    return fuse_.forward(concat_channels(ya, yb), snr, training);
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad) {
    if (!dual_) {
      Tensor<T> d = dy;
      for (std::size_t i = a_.size(); i-- > 0;) d = a_[i].backward(d, i > 0 || need_input_grad);
      return d;
    }
    auto [da, db] = split_channels(fuse_.backward(dy), split_);
    for (std::size_t i = a_.size(); i-- > 0;) da = a_[i].backward(da, i > 0 || need_input_grad);
    for (std::size_t i = b_.size(); i-- > 0;) db = b_[i].backward(db, i > 0 || need_input_grad);
    if (need_input_grad)
      for (std::size_t i = 0; i < da.v.size(); ++i) da.v[i] += db.v[i];
    return da;
  }

  void collect_main(ParamList<T>& o) {
    for (auto& s : a_) s.collect_main(o);
    for (auto& s : b_) s.collect_main(o);
    if (dual_) fuse_.collect_main(o);
  }
  void collect_af(ParamList<T>& o) {
    for (auto& s : a_) s.collect_af(o);
    for (auto& s : b_) s.collect_af(o);
    if (dual_) fuse_.collect_af(o);
  }

  std::vector<Stage<T>>& branch_a() { return a_; }
  std::vector<Stage<T>>& branch_b() { return b_; }
  Stage<T>& fuse() { return fuse_; }

 private:
  std::vector<Stage<T>> a_, b_;
  Stage<T> fuse_;
  bool dual_ = false;
  std::size_t split_ = 0;
};

}  // namespace detail

/// SC-CSI encoder: backbone feature extractor -> flatten -> FC to m values.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const BackboneSpec& s, std::mt19937_64& rng) : spec_(s) {
    s.validate();
    using detail::stage_opts;
    std::vector<Stage<T>> a, b;
    switch (s.variant) {
      case Backbone::csinet:
        a.emplace_back("enc.0", stage_opts<T>(2, 2, 3, 3, s), rng);
        features_ = detail::StageGraph<T>(std::move(a));
        break;
      case Backbone::csinet_plus:
        a.emplace_back("enc.0", stage_opts<T>(2, 2, 7, 7, s), rng);
        a.emplace_back("enc.1", stage_opts<T>(2, 2, 7, 7, s), rng);
        features_ = detail::StageGraph<T>(std::move(a));
        break;
      case Backbone::crnet: {
        a.emplace_back("enc.a0", stage_opts<T>(2, 2, 3, 3, s), rng);
        a.emplace_back("enc.a1", stage_opts<T>(2, 2, 1, 9, s), rng);
        a.emplace_back("enc.a2", stage_opts<T>(2, 2, 9, 1, s), rng);
        b.emplace_back("enc.b0", stage_opts<T>(2, 2, 3, 3, s), rng);
        Stage<T> fuse("enc.fuse", stage_opts<T>(4, 2, 1, 1, s), rng);
        features_ = detail::StageGraph<T>(std::move(a), std::move(b), std::move(fuse));
        break;
      }
    }
    fc_ = Dense<T>("enc.fc", s.input_size(), s.m, rng);
    out_act_ = Activation<T>("enc.out", s.codeword_act, s.m);
  }

  const BackboneSpec& spec() const noexcept { return spec_; }

  /// (2, N, N_c', N_t) -> (m, N, 1, 1).
  Tensor<T> forward(const Tensor<T>& x, std::span<const T> snr, bool training) {
    if (x.c != 2 || x.h != spec_.n_trunc || x.w != spec_.n_tx) throw ShapeError("Encoder: unexpected input " + x.shape_str());
    const Tensor<T> f = features_.forward(x, snr, training);
    return out_act_.forward(fc_.forward(flatten(f)));
  }

  Tensor<T> backward(const Tensor<T>& dc, bool need_input_grad = false) {
    const Tensor<T> df = unflatten(fc_.backward(out_act_.backward(dc)), 2, spec_.n_trunc, spec_.n_tx);
    return features_.backward(df, need_input_grad);
  }

  Dense<T>& projection() { return fc_; }
  void collect_main(ParamList<T>& o) {
    features_.collect_main(o);
    fc_.collect(o);
    out_act_.collect(o);
  }
  void collect_af(ParamList<T>& o) { features_.collect_af(o); }

 private:
  BackboneSpec spec_;
  detail::StageGraph<T> features_;
  Dense<T> fc_;
  Activation<T> out_act_;
};

/// SC-CSI decoder: FC to 2*N_c'*N_t -> reshape -> two residual refinement blocks -> sigmoid.
/// The last convolution of each block is zero-initialized, so a fresh
/// decoder returns sigmoid of its FC projection.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const BackboneSpec& s, std::mt19937_64& rng) : spec_(s) {
    s.validate();
    using detail::stage_opts;
    fc_ = Dense<T>("dec.fc", s.m, s.input_size(), rng);
    for (int blk = 0; blk < 2; ++blk) {
      const std::string p = "dec.block" + std::to_string(blk);
      std::vector<Stage<T>> a, b;
      switch (s.variant) {
        case Backbone::csinet:
        case Backbone::csinet_plus: {
          const std::size_t k = s.variant == Backbone::csinet ? 3 : 7;
          a.emplace_back(p + ".0", stage_opts<T>(2, 8, k, k, s), rng);
          a.emplace_back(p + ".1", stage_opts<T>(8, 16, k, k, s), rng);
          a.emplace_back(p + ".2", detail::residual_out<T>(16), rng);
          blocks_.emplace_back(std::move(a));
          break;
        }
        case Backbone::crnet: {
          a.emplace_back(p + ".a0", stage_opts<T>(2, 8, 3, 3, s), rng);
          b.emplace_back(p + ".b0", stage_opts<T>(2, 8, 1, 9, s), rng);
          b.emplace_back(p + ".b1", stage_opts<T>(8, 8, 9, 1, s), rng);
          Stage<T> fuse(p + ".fuse", detail::residual_out<T>(16), rng);
          blocks_.emplace_back(std::move(a), std::move(b), std::move(fuse));
          break;
        }
      }
    }
    out_ = Activation<T>("dec.out", Act::sigmoid, 2);
  }

  const BackboneSpec& spec() const noexcept { return spec_; }

  /// (m, N, 1, 1) -> (2, N, N_c', N_t).
  Tensor<T> forward(const Tensor<T>& c, std::span<const T> snr, bool training) {
    if (c.c != spec_.m || c.h != 1 || c.w != 1) throw ShapeError("Decoder: expected codeword of length " + std::to_string(spec_.m));
    Tensor<T> x = unflatten(fc_.forward(c), 2, spec_.n_trunc, spec_.n_tx);
    for (auto& b : blocks_) {
      Tensor<T> r = b.forward(x, snr, training);
      for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += r.v[i];
    }
    return out_.forward(x);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = out_.backward(dy);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      const Tensor<T> dr = blocks_[i].backward(d, true);
      for (std::size_t j = 0; j < d.v.size(); ++j) d.v[j] += dr.v[j];
    }
    return fc_.backward(flatten(d));
  }

  Dense<T>& projection() { return fc_; }
  std::vector<detail::StageGraph<T>>& blocks() { return blocks_; }
  void collect_main(ParamList<T>& o) {
    fc_.collect(o);
    for (auto& b : blocks_) b.collect_main(o);
  }
  void collect_af(ParamList<T>& o) {
    for (auto& b : blocks_) b.collect_af(o);
  }

 private:
  BackboneSpec spec_;
  Dense<T> fc_;
  std::vector<detail::StageGraph<T>> blocks_;
  Activation<T> out_;
};

/// Residual quantization-offset network: x + FC(LeakyReLU(FC(x))), m -> m -> m.
/// The second layer starts at zero, so a fresh network is the identity.
template <typename T>
class OffsetNet {
 public:
  OffsetNet() = default;
  OffsetNet(std::size_t m, std::mt19937_64& rng)
      : m_(m), fc1_("offset.fc1", m, m, rng), act_("offset.act", Act::leaky, m), fc2_("offset.fc2", m, m, rng) {
    std::fill(fc2_.weight().value.begin(), fc2_.weight().value.end(), T(0));
  }

  std::size_t dim() const noexcept { return m_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != m_ || x.h != 1 || x.w != 1) throw ShapeError("OffsetNet: dimension mismatch " + x.shape_str());
    Tensor<T> y = fc2_.forward(act_.forward(fc1_.forward(x)));
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = fc1_.backward(act_.backward(fc2_.backward(dy)));
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
    return dx;
  }

  Dense<T>& fc1() { return fc1_; }
  Dense<T>& fc2() { return fc2_; }
  void collect(ParamList<T>& o) {
    fc1_.collect(o);
    fc2_.collect(o);
  }

 private:
  std::size_t m_ = 0;
  Dense<T> fc1_;
  Activation<T> act_;
  Dense<T> fc2_;
};

}  // namespace csi_djscc::nn
