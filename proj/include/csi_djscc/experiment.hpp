#pragma once

// Named experiments: config schema, desk/full profiles, presets and the
// generate-data -> train -> sweep -> report orchestration.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/dataset_io.hpp"
#include "csi_djscc/errors.hpp"
#include "csi_djscc/evaluation.hpp"
#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/pipeline.hpp"
#include "csi_djscc/quantization.hpp"
#include "csi_djscc/report.hpp"
#include "csi_djscc/training.hpp"

#ifndef CSI_DJSCC_PRESET_DIR
#define CSI_DJSCC_PRESET_DIR "presets"
#endif

namespace csi_djscc {

struct DatasetSection {
  std::string dir;  // empty = <output_dir>/dataset; relative paths resolve against the output dir
  bool generate = true;
  std::size_t n_train = 4000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::uint64_t seed = 7;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSection, dir, generate, n_train, n_val, n_test, seed)

struct EvalSection {
  double grid_lo_db = -10.0;
  double grid_hi_db = 10.0;
  double grid_step_db = 1.0;
  std::string split = "test";
  std::uint64_t seed = 20211;
  std::size_t max_samples = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSection, grid_lo_db, grid_hi_db, grid_step_db, split, seed, max_samples)

struct ModelEntry {
  std::string label;
  PipelineConfig pipeline;
  TrainConfig train;
  BitLevelBudget bitlevel;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelEntry, label, pipeline, train, bitlevel)

/// Ideal SSCC threshold curves: one quantized autoencoder per distinct
/// m = ceil(k C(design SNR) / B), then the envelope over design SNRs.
struct SsccSection {
  bool enabled = false;
  nn::Backbone backbone = nn::Backbone::csinet_plus;
  std::size_t k = 16;
  QuantizerSpec quantizer;
  std::vector<double> design_snr_db;
  TrainConfig train;
  BitLevelBudget bitlevel;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SsccSection, enabled, backbone, k, quantizer, design_snr_db, train, bitlevel)

struct ExperimentConfig {
  std::string name = "experiment";
  std::string family;
  std::string profile = "desk";
  std::uint64_t seed = 1;
  ChannelScenario scenario = ChannelScenario::desk();
  DatasetSection dataset;
  std::vector<ModelEntry> models;
  SsccSection sscc;
  EvalSection evaluation;
  std::string output_dir;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, name, family, profile, seed, scenario, dataset, models, sscc,
                                                evaluation, output_dir)

// ---------------------------------------------------------------------------
// Profiles and config resolution

/// Fields a profile sets: scenario, dataset split sizes, and the training
/// defaults applied under every model's "train" block.
inline nlohmann::json profile_defaults(const std::string& profile) {
  nlohmann::json j;
  if (profile == "desk") {
    j["scenario"] = ChannelScenario::desk();
    j["dataset"] = {{"n_train", 4000}, {"n_val", 500}, {"n_test", 500}};
    j["train"] = {{"batch_size", 64}, {"max_epochs", 40}, {"plateau_patience_epochs", 5}, {"lr_init", 1e-3}, {"lr_floor", 1e-4}};
  } else if (profile == "full") {
    j["scenario"] = ChannelScenario::full();
    j["dataset"] = {{"n_train", 100000}, {"n_val", 30000}, {"n_test", 20000}};
    j["train"] = {{"batch_size", 200}, {"max_epochs", 500}, {"plateau_patience_epochs", 20}, {"lr_init", 1e-3}, {"lr_floor", 1e-4}};
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or full)");
  }
  return j;
}

namespace detail {

/// Rejects keys that the schema (the serialized default object) does not know.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& schema, const std::string& path) {
  if (!j.is_object() || !schema.is_object()) return;
  for (const auto& [key, val] : j.items()) {
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + path + key + "'");
    check_keys(val, schema[key], path + key + ".");
  }
}

/// Enum fields deserialize unknown names to their first value; a string that
/// does not survive the round trip is therefore an invalid choice.
inline void check_strings(const nlohmann::json& given, const nlohmann::json& parsed, const std::string& path) {
  if (given.is_object() && parsed.is_object()) {
    for (const auto& [key, val] : given.items())
      if (parsed.contains(key)) check_strings(val, parsed[key], path + key + ".");
  } else if (given.is_array() && parsed.is_array() && given.size() == parsed.size()) {
    for (std::size_t i = 0; i < given.size(); ++i) check_strings(given[i], parsed[i], path + std::to_string(i) + ".");
  } else if (given.is_string() && given != parsed) {
    throw ConfigError("config: invalid value '" + given.get<std::string>() + "' for '" + path.substr(0, path.size() - 1) + "'");
  }
}

inline nlohmann::json merged(nlohmann::json base, const nlohmann::json& patch) {
  base.merge_patch(patch);
  return base;
}

}  // namespace detail

struct ResolvedConfig {
  ExperimentConfig cfg;
  nlohmann::json resolved;  // fully expanded config, hashed for provenance
  std::string hash;
  std::filesystem::path base_dir;  // directory of the config file
};

/// Applies profile defaults, CLI overrides and per-entry seed derivation, then validates.
inline ResolvedConfig resolve_config(nlohmann::json raw, const std::optional<std::string>& profile_override = {},
                                     const std::optional<std::uint64_t>& seed_override = {},
                                     const std::filesystem::path& base_dir = {}) {
  if (!raw.is_object()) throw ConfigError("config: top level must be an object");
  {
    nlohmann::json schema = ExperimentConfig{};
    schema["models"] = nlohmann::json::object();
    schema["scenario_file"] = "";
    detail::check_keys(raw, schema, "");
    const nlohmann::json entry_schema = ModelEntry{};
    if (raw.contains("models")) {
      if (!raw["models"].is_array()) throw ConfigError("config: 'models' must be an array");
      for (const auto& m : raw["models"]) detail::check_keys(m, entry_schema, "models[].");
    }
  }
  if (profile_override) raw["profile"] = *profile_override;
  if (seed_override) raw["seed"] = *seed_override;
  const std::string profile = raw.value("profile", std::string("desk"));
  const auto prof = profile_defaults(profile);
  const std::uint64_t seed = raw.value("seed", std::uint64_t{1});

  nlohmann::json j = raw;
  nlohmann::json scenario = prof["scenario"];
  if (raw.contains("scenario_file")) {
    std::filesystem::path p = raw["scenario_file"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    scenario.merge_patch(csi_djscc::detail::read_json(p));
    j.erase("scenario_file");
  }
  if (raw.contains("scenario")) scenario.merge_patch(raw["scenario"]);
  j["scenario"] = scenario;
  j["dataset"] = detail::merged(prof["dataset"], raw.value("dataset", nlohmann::json::object()));
  if (!j["dataset"].contains("seed")) j["dataset"]["seed"] = derive_seed(seed, 1);
  nlohmann::json models = nlohmann::json::array();
  std::size_t i = 0;
  for (const auto& m : raw.value("models", nlohmann::json::array())) {
    nlohmann::json e = m;
    e["train"] = detail::merged(prof["train"], m.value("train", nlohmann::json::object()));
    if (!e["train"].contains("seed")) e["train"]["seed"] = derive_seed(seed, 100 + i);
    if (!e.contains("label")) e["label"] = "model" + std::to_string(i);
    models.push_back(e);
    ++i;
  }
  j["models"] = models;
  if (raw.contains("sscc")) {
    j["sscc"]["train"] = detail::merged(prof["train"], raw["sscc"].value("train", nlohmann::json::object()));
    if (!j["sscc"]["train"].contains("seed")) j["sscc"]["train"]["seed"] = derive_seed(seed, 99);
  }

  ResolvedConfig rc;
  try {
    rc.cfg = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  rc.base_dir = base_dir;
  const auto& c = rc.cfg;
  c.scenario.validate();
  if (c.dataset.n_train < 1 || c.dataset.n_val < 1 || c.dataset.n_test < 1) throw ConfigError("config: split sizes must be >= 1");
  make_grid(c.evaluation.grid_lo_db, c.evaluation.grid_hi_db, c.evaluation.grid_step_db);
  if (c.evaluation.split != "test" && c.evaluation.split != "val") throw ConfigError("config: evaluation.split must be test or val");
  std::set<std::string> labels;
  for (const auto& m : c.models) {
    if (m.label.empty()) throw ConfigError("config: model label must not be empty");
    if (!labels.insert(m.label).second) throw ConfigError("config: duplicate model label '" + m.label + "'");
    if (m.pipeline.variant == PipelineVariant::sscc_ideal) throw ConfigError("config: sscc_ideal curves come from the 'sscc' section");
    m.pipeline.validate(c.scenario);
    m.train.validate();
  }
  if (c.sscc.enabled) {
    if (c.sscc.design_snr_db.empty()) throw ConfigError("config: sscc.design_snr_db must not be empty");
    c.sscc.quantizer.validate();
    c.sscc.train.validate();
  }
  if (c.models.empty() && !c.sscc.enabled) throw ConfigError("config: nothing to run (no models, sscc disabled)");
  rc.resolved = c;
  detail::check_strings(j, rc.resolved, "");
  rc.hash = hash_hex(rc.resolved.dump());
  return rc;
}

inline ResolvedConfig load_config(const std::filesystem::path& file, const std::optional<std::string>& profile = {},
                                  const std::optional<std::uint64_t>& seed = {}) {
  nlohmann::json raw;
  try {
    raw = csi_djscc::detail::read_json(file);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return resolve_config(raw, profile, seed, file.parent_path());
}

// ---------------------------------------------------------------------------
// Presets

inline std::filesystem::path preset_dir() {
  if (const char* p = std::getenv("CSI_DJSCC_PRESET_DIR")) return p;
  return CSI_DJSCC_PRESET_DIR;
}

/// Preset names (file stems under the preset directory), sorted.
inline std::vector<std::string> list_presets() {
  std::vector<std::string> names;
  const auto dir = preset_dir();
  if (!std::filesystem::is_directory(dir)) throw ConfigError("preset directory not found: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

inline std::filesystem::path preset_path(const std::string& name) {
  const auto p = preset_dir() / (name + ".json");
  if (!std::filesystem::exists(p)) throw ConfigError("unknown preset '" + name + "'");
  return p;
}

// ---------------------------------------------------------------------------
// Orchestration

inline constexpr const char* kOutputRootEnv = "CSI_DJSCC_OUTPUT_ROOT";

inline std::filesystem::path output_dir_for(const ExperimentConfig& c, const std::optional<std::filesystem::path>& override_dir = {}) {
  std::filesystem::path out = override_dir ? *override_dir
                                           : std::filesystem::path(c.output_dir.empty() ? "runs/" + c.name : c.output_dir);
  if (out.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv)) out = std::filesystem::path(root) / out;
  }
  return out;
}

enum class Stage { generate_data, train, sweep, report };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::generate_data: return "generate-data";
    case Stage::train: return "train";
    case Stage::sweep: return "sweep";
    case Stage::report: return "report";
  }
  return "?";
}

struct RunOptions {
  std::set<Stage> stages = {Stage::generate_data, Stage::train, Stage::sweep, Stage::report};
  std::optional<std::filesystem::path> output_dir;
  std::ostream* log = nullptr;
};

/// Runs the requested stages; failures are rethrown as StageError tagged with
/// the stage. Artifacts of completed stages are kept.
class ExperimentRunner {
 public:
  ExperimentRunner(ResolvedConfig rc, RunOptions opt) : rc_(std::move(rc)), opt_(std::move(opt)) {
    out_ = output_dir_for(rc_.cfg, opt_.output_dir);
  }

  const std::filesystem::path& output_dir() const noexcept { return out_; }
  const ResolvedConfig& config() const noexcept { return rc_; }

  std::filesystem::path dataset_dir() const {
    const auto& d = rc_.cfg.dataset.dir;
    if (d.empty()) return out_ / "dataset";
    std::filesystem::path p(d);
    return p.is_relative() ? out_ / p : p;
  }
  std::filesystem::path model_dir(const std::string& label) const { return out_ / "models" / label; }

  void run() {
    std::filesystem::create_directories(out_);
    csi_djscc::detail::write_text(out_ / "config.resolved.json", rc_.resolved.dump(2) + "\n");
    for (Stage s : {Stage::generate_data, Stage::train, Stage::sweep, Stage::report}) {
      if (!opt_.stages.count(s)) continue;
      try {
        switch (s) {
          case Stage::generate_data: stage_generate(); break;
          case Stage::train: stage_train(); break;
          case Stage::sweep: stage_sweep(); break;
          case Stage::report: stage_report(); break;
        }
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(stage_name(s), e.what());
      }
    }
  }

  const CsiDataset& dataset() {
    if (!dataset_) {
      const auto dir = dataset_dir();
      if (std::filesystem::exists(dir / "manifest.json")) {
        dataset_ = load_dataset(dir);
        check_dataset(*dataset_);
      } else if (rc_.cfg.dataset.generate) {
        stage_generate();
      } else {
        throw Error("dataset not found at " + dir.string() + " and generation is disabled");
      }
    }
    return *dataset_;
  }

  ResultsFile results() const { return results_; }

 private:
  void say(const std::string& s) {
    if (opt_.log) *opt_.log << s << "\n" << std::flush;
  }

  void check_dataset(const CsiDataset& d) const {
    const auto& c = rc_.cfg;
    const auto& m = d.manifest();
    if (!(m.scenario == c.scenario) || m.n_train != c.dataset.n_train || m.n_val != c.dataset.n_val ||
        m.n_test != c.dataset.n_test || m.seed != c.dataset.seed)
      throw Error("dataset at " + dataset_dir().string() + " was generated from a different configuration");
  }

  void stage_generate() {
    const auto dir = dataset_dir();
    if (std::filesystem::exists(dir / "manifest.json")) {
      dataset_ = load_dataset(dir);
      check_dataset(*dataset_);
      say("[generate-data] reusing " + dir.string());
      return;
    }
    if (!rc_.cfg.dataset.generate) throw Error("dataset not found at " + dir.string() + " and generation is disabled");
    const auto& ds = rc_.cfg.dataset;
    say("[generate-data] " + std::to_string(ds.n_train) + "/" + std::to_string(ds.n_val) + "/" + std::to_string(ds.n_test) +
        " samples -> " + dir.string());
    dataset_ = generate_dataset(rc_.cfg.scenario, ds.n_train, ds.n_val, ds.n_test, ds.seed);
    save_dataset(*dataset_, dir);
  }

  nlohmann::json provenance(const std::string& label, std::uint64_t seed) {
    return {{"config_hash", rc_.hash}, {"dataset_hash", dataset().content_hash()}, {"label", label}, {"train_seed", seed}};
  }

  std::uint64_t init_seed(std::size_t i) const { return derive_seed(rc_.cfg.seed, 1000 + i); }

  void train_entry(const ModelEntry& e, std::size_t i) {
    const auto& d = dataset();
    const auto spec = e.pipeline.model_spec(d.scenario());
    nn::Model<float> model(spec, init_seed(i));
    const auto dir = model_dir(e.label);
    std::filesystem::create_directories(dir);
    say("[train] " + e.label);
    nlohmann::json report;
    nn::BundleInfo info{e.train.snr_range_db.lo_db, e.train.snr_range_db.hi_db, provenance(e.label, e.train.seed)};
    if (e.pipeline.variant == PipelineVariant::sscc_bit) {
      const auto rep = train_bitlevel(model, d, e.pipeline, e.train, e.bitlevel, opt_.log);
      report = rep;
    } else {
      auto res = train(model, d, e.pipeline, e.train, opt_.log, e.label);
      nn::save_model(res.last, dir / "last", info);
      report = res.report;
    }
    nn::save_model(model, dir / "best", info);
    report["config_hash"] = rc_.hash;
    csi_djscc::detail::write_text(dir / "train_report.json", report.dump(2) + "\n");
    csi_djscc::detail::write_text(dir / "config.json", nlohmann::json(e).dump(2) + "\n");
  }

  std::vector<ModelEntry> sscc_entries() const {
    std::vector<ModelEntry> out;
    if (!rc_.cfg.sscc.enabled) return out;
    const auto& s = rc_.cfg.sscc;
    std::set<std::size_t> ms;
    for (double mu : s.design_snr_db) ms.insert(ideal_dimension(s.k, SnrDb{mu}, s.quantizer.bits));
    for (std::size_t m : ms) {
      ModelEntry e;
      e.label = "SSCC-bit-m" + std::to_string(m);
      e.pipeline.variant = PipelineVariant::sscc_bit;
      e.pipeline.backbone = s.backbone;
      e.pipeline.k = s.k;
      e.pipeline.m = m;
      e.pipeline.transform = TransformKind::truncated_ad;
      e.pipeline.quantizer = s.quantizer;
      e.train = s.train;
      e.train.loss_domain = LossDomain::truncated_ad;
      e.train.seed = derive_seed(s.train.seed, m);
      e.bitlevel = s.bitlevel;
      out.push_back(e);
    }
    return out;
  }

  void stage_train() {
    const auto& models = rc_.cfg.models;
    for (std::size_t i = 0; i < models.size(); ++i) train_entry(models[i], i);
    const auto ss = sscc_entries();
    for (std::size_t i = 0; i < ss.size(); ++i) train_entry(ss[i], models.size() + i);
  }

  SweepOptions sweep_options(const TrainConfig& tc) const {
    SweepOptions o;
    o.split = rc_.cfg.evaluation.split == "val" ? Split::val : Split::test;
    o.seed = rc_.cfg.evaluation.seed;
    o.max_samples = rc_.cfg.evaluation.max_samples;
    o.snr_cap_db = tc.snr_range_db.hi_db;
    return o;
  }

  void stage_sweep() {
    const auto& c = rc_.cfg;
    const auto& d = dataset();
    const auto grid = make_grid(c.evaluation.grid_lo_db, c.evaluation.grid_hi_db, c.evaluation.grid_step_db);
    ResultsFile res;
    res.provenance = {{"config_hash", rc_.hash},
                      {"dataset_hash", d.content_hash()},
                      {"experiment", c.name},
                      {"seed", c.seed},
                      {"dataset_seed", c.dataset.seed},
                      {"eval_seed", c.evaluation.seed}};
    for (const auto& e : c.models) {
      const auto spec = e.pipeline.model_spec(d.scenario());
      auto model = nn::load_model<float>(model_dir(e.label) / "best", nullptr, &spec);
      const auto opt = sweep_options(e.train);
      if (e.pipeline.variant == PipelineVariant::sscc_bit) {
        const double v = bitlevel_nmse(model, d, e.pipeline, opt);
        res.metrics["bitlevel_nmse_db"][e.label] = detail::number_or_inf(v);
        continue;
      }
      say("[sweep] " + e.label);
      auto r = snr_sweep(model, d, e.pipeline, grid, opt, e.label);
      r.family = c.family;
      r.provenance["parameter_hash"] = nn::parameter_hash(model);
      r.provenance["train_seed"] = e.train.seed;
      r.provenance["config_hash"] = rc_.hash;
      res.metrics["cliff_db"][e.label] = cliff_metric(r);
      res.metrics["mean_nmse_db"][e.label] = r.mean_nmse_db();
      res.curves.push_back(std::move(r));
    }
    if (c.sscc.enabled) {
      AutoencoderTable table;
      for (const auto& e : sscc_entries()) {
        const auto spec = e.pipeline.model_spec(d.scenario());
        auto model = nn::load_model<float>(model_dir(e.label) / "best", nullptr, &spec);
        table[e.pipeline.m] = bitlevel_nmse(model, d, e.pipeline, sweep_options(e.train));
        res.metrics["autoencoder_table_db"][std::to_string(e.pipeline.m)] = detail::number_or_inf(table[e.pipeline.m]);
      }
      std::vector<SweepResult> curves;
      for (double mu : c.sscc.design_snr_db) {
        IdealSchemeSpec s{c.sscc.k, c.sscc.quantizer.bits, mu};
        auto r = sscc_ideal_curve(s, grid, table);
        r.family = c.family;
        r.provenance["config_hash"] = rc_.hash;
        res.metrics["cliff_db"][r.label] = cliff_metric(r);
        curves.push_back(r);
      }
      auto env = envelope(curves, "SSCC-envelope");
      env.family = c.family;
      res.metrics["cliff_db"][env.label] = cliff_metric(env);
      res.curves.push_back(env);
      for (auto& r : curves) res.curves.push_back(std::move(r));
    }
    results_ = res;
    save_results(res, out_ / "results.json");
  }

  void stage_report() {
    if (results_.curves.empty()) {
      const auto f = out_ / "results.json";
      if (!std::filesystem::exists(f)) throw Error("no results.json in " + out_.string() + "; run the sweep stage first");
      results_ = load_results(f);
    }
    make_report(results_, out_);
  }

  ResolvedConfig rc_;
  RunOptions opt_;
  std::filesystem::path out_;
  std::optional<CsiDataset> dataset_;
  ResultsFile results_;
};

/// Loads a config (file path or preset name) and runs all stages.
inline std::filesystem::path run_experiment(const std::filesystem::path& cfg_path, RunOptions opt = {},
                                            const std::optional<std::string>& profile = {},
                                            const std::optional<std::uint64_t>& seed = {}) {
  ExperimentRunner r(load_config(cfg_path, profile, seed), std::move(opt));
  r.run();
  return r.output_dir();
}

}  // namespace csi_djscc
