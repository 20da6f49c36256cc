#pragma once

// Model bundle: the eight parameter groups of the UE and BS networks,
// parameter accounting and on-disk serialization.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/dataset_io.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/nn/networks.hpp"
#include "csi_djscc/types.hpp"

namespace csi_djscc::nn {

enum class TransformKind { nonlinear, truncated_ad };

NLOHMANN_JSON_SERIALIZE_ENUM(TransformKind, {{TransformKind::nonlinear, "nonlinear"},
                                             {TransformKind::truncated_ad, "truncated_ad"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Backbone, {{Backbone::csinet, "csinet"},
                                        {Backbone::csinet_plus, "csinet_plus"},
                                        {Backbone::crnet, "crnet"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Act, {{Act::none, "none"},
                                   {Act::prelu, "prelu"},
                                   {Act::leaky, "leaky"},
                                   {Act::relu, "relu"},
                                   {Act::sigmoid, "sigmoid"},
                                   {Act::tanh, "tanh"}})

/// Architecture of one bundle. Everything that changes the parameter layout
/// is in here and therefore in the ModelSpec hash.
struct ModelSpec {
  Backbone backbone = Backbone::csinet;
  std::size_t m = 32;
  std::size_t n_sub = 64;
  std::size_t n_trunc = 16;
  std::size_t n_tx = 16;
  TransformKind transform = TransformKind::nonlinear;
  bool adaptive = true;
  bool offset_net = false;
  Act codeword_act = Act::none;
  std::size_t atn_width1 = 32;
  std::size_t atn_width2 = 32;
  std::size_t atn_kernel = 3;
  std::size_t af_hidden = 0;

  void validate() const {
    if (m < 1) throw ConfigError("ModelSpec: m must be >= 1");
    if (n_tx < 1 || n_trunc < 1 || n_trunc > n_sub) throw ConfigError("ModelSpec: invalid CSI dimensions");
    if (transform == TransformKind::nonlinear) transform_strides(n_sub, n_trunc);
  }

  BackboneSpec backbone_spec() const {
    return {backbone, m, n_trunc, n_tx, adaptive, af_hidden, codeword_act};
  }
  TransformNetSpec transform_spec() const {
    return {n_sub, n_trunc, n_tx, atn_width1, atn_width2, atn_kernel, adaptive, af_hidden};
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelSpec, backbone, m, n_sub, n_trunc, n_tx, transform, adaptive,
                                                offset_net, codeword_act, atn_width1, atn_width2, atn_kernel,
                                                af_hidden)

inline constexpr const char* kArchitectureTag = "csi-djscc-arch/1";
inline constexpr const char* kModelVersion = "csi-djscc-model/1";

inline std::string spec_hash(const ModelSpec& s) {
  nlohmann::json j = s;
  j["arch"] = kArchitectureTag;
  return hash_hex(j.dump());
}

/// alpha: ATN, theta: encoder, phi: decoder (+ offset network), beta: STN,
/// gamma/psi/rho/tau: the AF modules inside ATN/encoder/decoder/STN.
enum class Group { alpha, theta, phi, beta, gamma, psi, rho, tau };
inline constexpr std::array<Group, 8> kAllGroups = {Group::alpha, Group::theta, Group::phi, Group::beta,
                                                    Group::gamma, Group::psi,   Group::rho, Group::tau};

inline const char* group_name(Group g) {
  static constexpr const char* names[] = {"alpha", "theta", "phi", "beta", "gamma", "psi", "rho", "tau"};
  return names[static_cast<int>(g)];
}

enum class Side { ue, bs };

inline Side group_side(Group g) {
  switch (g) {
    case Group::alpha:
    case Group::theta:
    case Group::gamma:
    case Group::psi: return Side::ue;
    default: return Side::bs;
  }
}

template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    if (has_transform_nets()) atn_ = AnalysisTransform<T>(spec_.transform_spec(), rng);
    enc_ = Encoder<T>(spec_.backbone_spec(), rng);
    dec_ = Decoder<T>(spec_.backbone_spec(), rng);
    if (spec_.offset_net) offset_ = OffsetNet<T>(spec_.m, rng);
    if (has_transform_nets()) stn_ = SynthesisTransform<T>(spec_.transform_spec(), rng);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  bool has_transform_nets() const noexcept { return spec_.transform == TransformKind::nonlinear; }

  AnalysisTransform<T>& atn() { return atn_; }
  SynthesisTransform<T>& stn() { return stn_; }
  Encoder<T>& encoder() { return enc_; }
  Decoder<T>& decoder() { return dec_; }
  OffsetNet<T>& offset() { return offset_; }

  /// Every parameter of a group, including non-trainable BN running statistics.
  ParamList<T> group(Group g) {
    ParamList<T> out;
    const bool tn = has_transform_nets();
    switch (g) {
      case Group::alpha: if (tn) atn_.collect_main(out); break;
      case Group::theta: enc_.collect_main(out); break;
      case Group::phi:
        dec_.collect_main(out);
        if (spec_.offset_net) offset_.collect(out);
        break;
      case Group::beta: if (tn) stn_.collect_main(out); break;
      case Group::gamma: if (tn) atn_.collect_af(out); break;
      case Group::psi: enc_.collect_af(out); break;
      case Group::rho: dec_.collect_af(out); break;
      case Group::tau: if (tn) stn_.collect_af(out); break;
    }
    return out;
  }

  ParamList<T> all_params() {
    ParamList<T> out;
    for (Group g : kAllGroups) {
      auto p = group(g);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  ParamList<T> trainable(std::span<const Group> groups) {
    ParamList<T> out;
    for (Group g : groups)
      for (auto* p : group(g))
        if (p->trainable) out.push_back(p);
    return out;
  }

  std::size_t group_count(Group g) {
    std::size_t n = 0;
    for (auto* p : group(g))
      if (p->trainable) n += p->size();
    return n;
  }

  /// Trainable parameters on one side: UE = alpha+theta+gamma+psi, BS = phi+beta+rho+tau.
  std::size_t count_params(Side side) {
    std::size_t n = 0;
    for (Group g : kAllGroups)
      if (group_side(g) == side) n += group_count(g);
    return n;
  }
  std::size_t count_params() { return count_params(Side::ue) + count_params(Side::bs); }

  void zero_grad() {
    for (auto* p : all_params()) p->zero_grad();
  }

  bool all_finite() {
    for (auto* p : all_params())
      for (T v : p->value)
        if (!std::isfinite(v)) return false;
    return true;
  }

  /// Copies values of the given groups from a model with the same layout in those groups.
  template <typename U>
  void copy_groups_from(Model<U>& other, std::span<const Group> groups) {
    for (Group g : groups) {
      auto dst = group(g);
      auto src = other.group(g);
      if (dst.size() != src.size()) throw ShapeError(std::string("copy_groups_from: layout mismatch in ") + group_name(g));
      for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->size() != src[i]->size()) throw ShapeError("copy_groups_from: parameter size mismatch " + dst[i]->name);
        for (std::size_t j = 0; j < dst[i]->size(); ++j) dst[i]->value[j] = static_cast<T>(src[i]->value[j]);
      }
    }
  }
  template <typename U>
  void copy_from(Model<U>& other) {
    copy_groups_from(other, kAllGroups);
  }

  /// UE side: normalized CSI image -> codeword (m, N, 1, 1).
  Tensor<T> encode(const Tensor<T>& x, std::span<const T> snr, bool training) {
    if (has_transform_nets()) return enc_.forward(atn_.forward(x, snr, training), snr, training);
    return enc_.forward(x, snr, training);
  }

  /// Gradient w.r.t. the codeword flows back into every UE parameter.
  void encode_backward(const Tensor<T>& dc) {
    if (has_transform_nets())
      atn_.backward(enc_.backward(dc, true), false);
    else
      enc_.backward(dc, false);
  }

  /// BS side: received codeword -> reconstructed image.
  Tensor<T> decode(const Tensor<T>& c_hat, std::span<const T> snr, bool training) {
    if (has_transform_nets()) return stn_.forward(dec_.forward(c_hat, snr, training), snr, training);
    return dec_.forward(c_hat, snr, training);
  }

  Tensor<T> decode_backward(const Tensor<T>& dy) {
    if (has_transform_nets()) return dec_.backward(stn_.backward(dy));
    return dec_.backward(dy);
  }

 private:
  ModelSpec spec_;
  AnalysisTransform<T> atn_;
  Encoder<T> enc_;
  Decoder<T> dec_;
  OffsetNet<T> offset_;
  SynthesisTransform<T> stn_;
};

/// FNV-1a over the float32 image of every parameter, in group order.
template <typename T>
std::string parameter_hash(Model<T>& model) {
  Fnv1a h;
  h.update(spec_hash(model.spec()));
  for (auto* p : model.all_params())
    for (T v : p->value) {
      const float f = static_cast<float>(v);
      h.update(&f, sizeof f);
    }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Serialization: model.json + one little-endian float32 blob per group.

struct BundleInfo {
  double snr_lo_db = -10.0;
  double snr_hi_db = 10.0;
  nlohmann::json provenance = nlohmann::json::object();
};

template <typename T>
void save_model(Model<T>& model, const std::filesystem::path& dir, const BundleInfo& info = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["version"] = kModelVersion;
  j["spec"] = model.spec();
  j["spec_hash"] = spec_hash(model.spec());
  j["parameter_hash"] = parameter_hash(model);
  j["snr_range_db"] = {info.snr_lo_db, info.snr_hi_db};
  j["provenance"] = info.provenance;
  j["count_params"] = {{"ue", model.count_params(Side::ue)}, {"bs", model.count_params(Side::bs)}};
  for (Group g : kAllGroups) {
    std::vector<float> blob;
    nlohmann::json params = nlohmann::json::array();
    for (auto* p : model.group(g)) {
      params.push_back({{"name", p->name}, {"size", p->size()}, {"trainable", p->trainable}});
      for (T v : p->value) blob.push_back(static_cast<float>(v));
    }
    const std::string file = std::string(group_name(g)) + ".bin";
    csi_djscc::detail::write_floats(dir / file, blob);
    j["groups"][group_name(g)] = {{"file", file}, {"floats", blob.size()}, {"params", params}};
  }
  csi_djscc::detail::write_text(dir / "model.json", j.dump(2) + "\n");
}

template <typename T>
Model<T> load_model(const std::filesystem::path& dir, BundleInfo* info = nullptr, const ModelSpec* expected = nullptr) {
  const nlohmann::json j = csi_djscc::detail::read_json(dir / "model.json");
  if (!j.contains("version")) throw FormatError("model.json: missing version tag");
  if (j["version"] != kModelVersion) throw VersionError("model.json: unsupported version " + j["version"].dump());
  ModelSpec spec;
  try {
    spec = j.at("spec").get<ModelSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model.json: bad spec: ") + e.what());
  }
  if (j.value("spec_hash", std::string{}) != spec_hash(spec))
    throw FormatError("model.json: spec hash does not match the stored architecture");
  if (expected != nullptr && spec_hash(*expected) != spec_hash(spec))
    throw FormatError("model bundle architecture does not match the requested configuration");
  Model<T> model(spec, 0);
  for (Group g : kAllGroups) {
    auto params = model.group(g);
    std::size_t total = 0;
    for (auto* p : params) total += p->size();
    const auto& gj = j.at("groups").at(group_name(g));
    if (gj.at("floats").get<std::size_t>() != total) throw ShapeError(std::string("model group size mismatch: ") + group_name(g));
    const auto blob = csi_djscc::detail::read_floats(dir / gj.at("file").get<std::string>(), total);
    std::size_t off = 0;
    for (auto* p : params)
      for (auto& v : p->value) v = static_cast<T>(blob[off++]);
  }
  if (!model.all_finite()) throw FormatError("model bundle contains non-finite parameters");
  if (info != nullptr) {
    info->snr_lo_db = j.at("snr_range_db").at(0).get<double>();
    info->snr_hi_db = j.at("snr_range_db").at(1).get<double>();
    info->provenance = j.value("provenance", nlohmann::json::object());
  }
  return model;
}

}  // namespace csi_djscc::nn
