#pragma once

// File-to-file pipeline stages behind the command line:
// prices CSV -> CPD cache -> checkpoints -> reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpdmom/backtest.hpp"
#include "cpdmom/config.hpp"

namespace cpdmom::app {

// key=value log lines on stderr, mirrored to a file once one is set.
void set_log_file(const std::filesystem::path& path);
void log(const std::string& level, const std::string& stage, const std::string& message);

// Synthetic data spec (JSON): either explicit assets with regime segments or
// a "universe" block; see README. `seed` overrides the spec's top-level seed.
std::vector<data::PriceSeries> synthetic_from_json(const std::string& text, std::optional<std::uint64_t> seed = {});
void cmd_gen_data(const std::filesystem::path& spec, const std::filesystem::path& out_csv,
                  std::optional<std::uint64_t> seed = {});

std::vector<data::AssetFrame> load_frames(const RunConfig& cfg);

struct CpdSummary {
  std::size_t added = 0;
  std::size_t total = 0;
  std::size_t carried_forward = 0;
};
// Fills the cache for every (asset, day, lookback) in scope, skipping rows
// already present. Refuses a cache written under different data options.
CpdSummary cmd_cpd(const RunConfig& cfg);

struct TrainSummary {
  int trained = 0;
  int skipped = 0;
};
TrainSummary cmd_train(const RunConfig& cfg, bool resume);

// Model directory name for a learned strategy, e.g. lstm_cpd_lbw21.
std::string model_tag(const strat::StrategySpec& spec);
// File-name form of a strategy name.
std::string file_stem(const std::string& strategy);

// Assets whose validation span in `w` holds a full sequence.
std::vector<std::string> eligible_assets(const std::vector<dmn::AssetFeatures>& base, const bt::Window& w,
                                         const dmn::TrainOptions& options);

void cmd_backtest(const RunConfig& cfg);
void cmd_cost_sweep(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// --- result files -------------------------------------------------------

void write_asset_returns(const std::filesystem::path& path, const bt::StrategyReturns& r);
bt::StrategyReturns read_asset_returns(const std::filesystem::path& path, const strat::StrategySpec& spec);

}  // namespace cpdmom::app
