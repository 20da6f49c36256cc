// csi-djscc command line: dataset generation, training, sweeps and reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "csi_djscc.hpp"

namespace fs = std::filesystem;
using namespace csi_djscc;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonArgs {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("-c,--config", a.config, "experiment config file or preset name")->required();
  sub->add_option("-p,--profile", a.profile, "profile override")->check(CLI::IsMember({"desk", "full"}));
  sub->add_option("-s,--seed", a.seed, "master seed override");
  sub->add_option("-o,--out", a.out, "output directory override");
  sub->add_flag("-q,--quiet", a.quiet, "suppress progress output");
}

fs::path config_path(const std::string& name) {
  if (fs::exists(name)) return name;
  return preset_path(name);
}

ExperimentRunner make_runner(const CommonArgs& a, std::set<Stage> stages) {
  const auto profile = a.profile.empty() ? std::nullopt : std::optional<std::string>(a.profile);
  auto rc = load_config(config_path(a.config), profile, a.seed);
  RunOptions opt;
  opt.stages = std::move(stages);
  if (!a.out.empty()) opt.output_dir = fs::path(a.out);
  opt.log = a.quiet ? nullptr : &std::cerr;
  return ExperimentRunner(std::move(rc), opt);
}

int run_stages(const CommonArgs& a, std::set<Stage> stages) {
  auto r = make_runner(a, std::move(stages));
  r.run();
  std::cout << r.output_dir().string() << "\n";
  return 0;
}

struct GenerateArgs {
  std::string scenario;
  std::string out;
  std::size_t n_train = 4000, n_val = 500, n_test = 500;
  std::uint64_t seed = 1;
  std::string profile = "desk";
};

int generate_standalone(const GenerateArgs& g) {
  ChannelScenario sc = g.profile == "full" ? ChannelScenario::full() : ChannelScenario::desk();
  if (!g.scenario.empty()) {
    nlohmann::json j = sc;
    try {
      j.merge_patch(csi_djscc::detail::read_json(g.scenario));
      sc = j.get<ChannelScenario>();
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("scenario: ") + e.what());
    }
  }
  sc.validate();
  if (g.n_train < 1 || g.n_val < 1 || g.n_test < 1) throw ConfigError("split sizes must be >= 1");
  try {
    const auto d = generate_dataset(sc, g.n_train, g.n_val, g.n_test, g.seed);
    save_dataset(d, g.out);
    std::cout << g.out << " " << d.content_hash() << "\n";
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("generate-data", e.what());
  }
  return 0;
}

struct EvaluateArgs {
  CommonArgs common;
  std::vector<double> snr;
  std::string label;
};

/// NMSE of trained models at chosen SNRs; prints a table and writes evaluation.json.
int evaluate(const EvaluateArgs& e) {
  auto r = make_runner(e.common, {});
  const auto& cfg = r.config().cfg;
  std::vector<double> grid = e.snr;
  if (grid.empty())
    grid = make_grid(cfg.evaluation.grid_lo_db, cfg.evaluation.grid_hi_db, cfg.evaluation.grid_step_db);
  nlohmann::json out = {{"config_hash", r.config().hash}, {"models", nlohmann::json::object()}};
  bool found = e.label.empty();
  try {
    const auto& d = r.dataset();
    for (const auto& m : cfg.models) {
      if (!e.label.empty() && m.label != e.label) continue;
      found = true;
      const auto spec = m.pipeline.model_spec(d.scenario());
      auto model = nn::load_model<float>(r.model_dir(m.label) / "best", nullptr, &spec);
      SweepOptions opt;
      opt.split = cfg.evaluation.split == "val" ? Split::val : Split::test;
      opt.seed = cfg.evaluation.seed;
      opt.max_samples = cfg.evaluation.max_samples;
      opt.snr_cap_db = m.train.snr_range_db.hi_db;
      if (m.pipeline.variant == PipelineVariant::sscc_bit) {
        const double v = bitlevel_nmse(model, d, m.pipeline, opt);
        std::printf("%-24s bit-level NMSE %8.3f dB\n", m.label.c_str(), v);
        out["models"][m.label] = {{"bitlevel_nmse_db", csi_djscc::detail::number_or_inf(v)}};
        continue;
      }
      const auto res = snr_sweep(model, d, m.pipeline, grid, opt, m.label);
      std::printf("%-24s", m.label.c_str());
      for (std::size_t i = 0; i < res.size(); ++i) std::printf(" %+.0fdB:%7.3f", res.snr_grid_db[i], res.nmse_db[i]);
      std::printf("\n");
      out["models"][m.label] = res;
    }
  } catch (const std::exception& ex) {
    throw StageError("evaluate", ex.what());
  }
  if (!found) throw ConfigError("no model labelled '" + e.label + "'");
  csi_djscc::detail::write_text(r.output_dir() / "evaluation.json", out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep joint source-channel coding for CSI feedback"};
  app.name("csi-djscc");
  app.require_subcommand(1);

  GenerateArgs gen;
  CommonArgs gen_cfg;
  auto* sub_gen = app.add_subcommand("generate-data", "generate a synthetic CSI dataset");
  sub_gen->add_option("--scenario", gen.scenario, "scenario JSON (fields override the profile scenario)");
  sub_gen->add_option("--out", gen.out, "dataset directory");
  sub_gen->add_option("--train", gen.n_train, "training samples");
  sub_gen->add_option("--val", gen.n_val, "validation samples");
  sub_gen->add_option("--test", gen.n_test, "test samples");
  sub_gen->add_option("--seed", gen.seed, "generation seed");
  sub_gen->add_option("--profile", gen.profile, "base scenario")->check(CLI::IsMember({"desk", "full"}));
  sub_gen->add_option("--config", gen_cfg.config, "run the generate-data stage of an experiment instead");
  sub_gen->add_flag("-q,--quiet", gen_cfg.quiet);

  CommonArgs train_a, sweep_a, report_a, run_a;
  auto* sub_train = app.add_subcommand("train", "train every model of an experiment");
  add_common(sub_train, train_a);
  auto* sub_sweep = app.add_subcommand("sweep", "NMSE-vs-SNR sweeps of trained models, writes results.json");
  add_common(sub_sweep, sweep_a);
  auto* sub_report = app.add_subcommand("report", "plots and report.md from results.json");
  add_common(sub_report, report_a);
  auto* sub_run = app.add_subcommand("run", "generate-data, train, sweep and report");
  add_common(sub_run, run_a);

  EvaluateArgs eval;
  auto* sub_eval = app.add_subcommand("evaluate", "NMSE of trained models at chosen SNRs");
  add_common(sub_eval, eval.common);
  sub_eval->add_option("--snr", eval.snr, "test SNRs in dB (default: the config grid)");
  sub_eval->add_option("--label", eval.label, "evaluate only this model");

  auto* sub_presets = app.add_subcommand("presets", "list bundled experiment presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sub_gen) {
      if (!gen_cfg.config.empty()) {
        if (!gen.out.empty()) gen_cfg.out = gen.out;
        return run_stages(gen_cfg, {Stage::generate_data});
      }
      if (gen.out.empty()) throw ConfigError("generate-data: --out is required without --config");
      return generate_standalone(gen);
    }
    if (*sub_train) return run_stages(train_a, {Stage::generate_data, Stage::train});
    if (*sub_sweep) return run_stages(sweep_a, {Stage::sweep});
    if (*sub_report) return run_stages(report_a, {Stage::report});
    if (*sub_run) return run_stages(run_a, {Stage::generate_data, Stage::train, Stage::sweep, Stage::report});
    if (*sub_eval) return evaluate(eval);
    if (*sub_presets) {
      for (const auto& p : list_presets()) std::cout << p << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
