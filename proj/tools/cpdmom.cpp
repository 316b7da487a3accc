// Command-line front end: gen-data, cpd, train, backtest, cost-sweep, report.

#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cpdmom/config.hpp"
#include "cpdmom/errors.hpp"
#include "cpdmom/pipeline.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool resume = false;
};

cpdmom::app::RunConfig resolve(const Globals& g) {
  auto cfg = g.config.empty() ? cpdmom::app::RunConfig{} : cpdmom::app::load_config(g.config);
  if (!g.out.empty()) cfg.out = g.out;
  if (g.seed) cfg.seed = *g.seed;
  if (g.workers) cfg.workers = *g.workers;
  cpdmom::app::validate(cfg);
  cpdmom::app::set_log_file(cfg.out / "run.log");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slow momentum with fast reversion: GP changepoint detection feeding a deep momentum network"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "flat key = value run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "overrides the configured seed");
  app.add_option("--workers", g.workers, "OpenMP worker count (0: all cores)");
  app.add_option("--out", g.out, "output directory (overrides `out`)");
  app.add_flag("--resume", g.resume, "skip windows whose checkpoints already exist");

  std::string spec, output;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic price CSV from a JSON spec");
  gen->add_option("--spec", spec, "JSON synthetic spec")->required();
  gen->add_option("--output", output, "price CSV (default: <out>/prices.csv)");

  auto* cpd = app.add_subcommand("cpd", "precompute changepoint scores into the CPD cache");
  auto* train = app.add_subcommand("train", "random-search and train one model per window");
  auto* backtest = app.add_subcommand("backtest", "run every strategy over the test windows and write reports");
  auto* costs = app.add_subcommand("cost-sweep", "Sharpe under 0-5 bps turnover costs from backtest returns");
  auto* report = app.add_subcommand("report", "rebuild the performance tables from backtest returns");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(g);
    if (gen->parsed()) {
      cpdmom::app::cmd_gen_data(spec, output.empty() ? cfg.prices_path() : std::filesystem::path(output), g.seed);
    } else if (cpd->parsed()) {
      cpdmom::app::cmd_cpd(cfg);
    } else if (train->parsed()) {
      cpdmom::app::cmd_train(cfg, g.resume);
    } else if (backtest->parsed()) {
      cpdmom::app::cmd_backtest(cfg);
    } else if (costs->parsed()) {
      cpdmom::app::cmd_cost_sweep(cfg);
    } else if (report->parsed()) {
      cpdmom::app::cmd_report(cfg);
    }
  } catch (const cpdmom::Error& e) {
    cpdmom::app::log("error", "cli", e.what());
    return 1;
  } catch (const std::exception& e) {
    cpdmom::app::log("error", "cli", std::string("unexpected failure: ") + e.what());
    return 2;
  }
  return 0;
}
