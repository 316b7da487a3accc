#pragma once

// Flat `key = value` run configuration. Every model constant is a defaulted
// key; see README for the full list.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpdmom/data.hpp"
#include "cpdmom/features.hpp"
#include "cpdmom/train.hpp"

namespace cpdmom::app {

struct RunConfig {
  RunConfig() { grid.cpd_lookback = {10, 21, 63, 126, 252}; }

  std::filesystem::path out = "out";
  std::filesystem::path prices;     // empty: <out>/prices.csv
  std::filesystem::path cpd_cache;  // empty: <out>/cpd_cache.csv
  std::filesystem::path models;     // empty: <out>/models

  std::vector<int> lookbacks = {10, 21, 63, 126, 252};
  bool allow_any_lookback = false;

  double sigma_target = 0.15;
  data::PrepOptions prep;

  int window_start = 1990;
  int window_end = 2020;
  int window_step = 5;
  int initial_train = 5;

  std::vector<std::string> strategies = {"long_only", "moskowitz", "intermediate:w=0.5", "macd", "lstm",
                                         "lstm_cpd:lbw=opt"};

  dmn::FeatureConfig features;
  dmn::TrainOptions train;
  dmn::SearchGrid grid;  // cpd_lookback applies to lstm_cpd:lbw=opt only
  int search_iters = 50;

  std::vector<double> cost_bps = {0, 1, 2, 3, 4, 5};
  double changepoint_threshold = 0.9;
  int changepoint_burn_in = 63;

  std::uint64_t seed = 42;
  int workers = 0;

  std::filesystem::path prices_path() const { return prices.empty() ? out / "prices.csv" : prices; }
  std::filesystem::path cpd_cache_path() const { return cpd_cache.empty() ? out / "cpd_cache.csv" : cpd_cache; }
  std::filesystem::path models_path() const { return models.empty() ? out / "models" : models; }
};

// Throws ConfigError naming the line for unknown keys or bad values.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

// Cross-field checks (lookback set, grid values, window bounds).
void validate(const RunConfig& cfg);

// Serialized form that parse_config reads back to an equal config.
std::string dump_config(const RunConfig& cfg);

}  // namespace cpdmom::app
