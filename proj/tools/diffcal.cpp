// diffcal: item difficulty calibration from response logs and LLM judgements.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "diffcal/pipeline.hpp"

namespace pl = diffcal::pipeline;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> only;
  std::vector<std::string> set;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "run configuration (JSON)")->required();
  cmd->add_option("--only", c.only, "cell id glob, e.g. 'gpt-4o/pairwise/*' (repeatable)");
  cmd->add_option("--set", c.set, "override a config key: dotted.key=value (repeatable)");
  cmd->add_flag("--force", c.force, "rerun even when inputs are unchanged");
}

pl::RunConfig load(const Common& c) {
  auto cfg = pl::load_config(c.config, c.set);
  cfg.only = c.only;
  return cfg;
}

void print(const pl::StageOutcome& o) { std::cout << pl::to_string(o.stage) << ": " << o.message << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate item difficulty from response logs and LLM expert judgements"};
  app.set_version_flag("--version", std::string(pl::kToolVersion));
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "trace, debug, info, warn, error")->capture_default_str();

  Common common;
  std::map<CLI::App*, pl::Stage> stage_cmds;
  for (auto s : pl::kAllStages) {
    const std::string name(pl::to_string(s));
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
    add_common(cmd, common);
    stage_cmds[cmd] = s;
  }
  auto* all = app.add_subcommand("all", "run every stage in order");
  add_common(all, common);

  pl::SynthOptions synth;
  std::string synth_dir;
  std::vector<std::string> synth_domains;
  auto* syn = app.add_subcommand("synth", "write a synthetic study (logs, item bank, mock-backend config)");
  syn->add_option("dir", synth_dir, "output directory")->required();
  syn->add_option("--domain", synth_domains, "domains to generate (default: all)");
  syn->add_option("--items", synth.n_items, "items per domain")->capture_default_str();
  syn->add_option("--users", synth.n_users, "users per domain")->capture_default_str();
  syn->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  syn->add_option("--bootstrap", synth.bootstrap_iterations, "bootstrap iterations in the config")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");

  try {
    if (syn->parsed()) {
      if (!synth_domains.empty()) {
        synth.domains.clear();
        for (const auto& d : synth_domains) synth.domains.push_back(diffcal::parse_domain(d));
      }
      std::cout << pl::write_synthetic_study(synth_dir, synth).string() << "\n";
      return 0;
    }
    const auto cfg = load(common);
    pl::StageOptions opt;
    opt.force = common.force;
    if (all->parsed()) {
      for (const auto& o : pl::run_all(cfg, opt)) print(o);
      return 0;
    }
    for (const auto& [cmd, s] : stage_cmds)
      if (cmd->parsed()) print(pl::run_stage(s, cfg, opt));
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return pl::exit_code_for(e);
  }
}
