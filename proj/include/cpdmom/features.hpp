#pragma once

// Per-day model inputs: volatility-normalized multi-horizon returns, MACD
// indicators and, optionally, the changepoint score/location.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpdmom/cpd.hpp"
#include "cpdmom/data.hpp"
#include "cpdmom/strategies.hpp"

namespace cpdmom::dmn {

struct FeatureConfig {
  std::vector<int> return_offsets = {1, 21, 63, 126, 252};
  strat::MacdParams macd;
  int cpd_lookback = 0;  // 0: no changepoint inputs

  int size() const {
    return static_cast<int>(return_offsets.size() + macd.pairs.size()) + (cpd_lookback > 0 ? 2 : 0);
  }
};

struct FeatureRow {
  std::string symbol;
  Date date{};
  std::vector<double> norm_returns;
  std::vector<double> macd;
  std::optional<double> cpd_nu;
  std::optional<double> cpd_gamma;

  std::vector<double> values() const;
};

// Feature columns for every tradable day of one asset, in date order.
struct AssetFeatures {
  std::string symbol;
  std::vector<Date> dates;                // feature date t
  std::vector<std::size_t> frame_index;   // t in the source AssetFrame
  std::vector<Date> target_dates;         // date of t+1, or dates[i] on the last day
  Eigen::MatrixXd x;                      // features x rows
  std::vector<double> target;             // (sigma_tgt / sigma_t) r_{t+1}; NaN on the last day

  std::size_t rows() const { return dates.size(); }
};

// Normalized returns use the daily ex-ante vol (annualized sigma / sqrt(252)):
// r_{t-k,t} / (sigma_daily_t sqrt(k)). A day is tradable once every input is
// defined. Throws ValidationError when `cpd` lacks a row the config needs.
AssetFeatures build_features(const data::AssetFrame& frame, const FeatureConfig& config,
                             const cpd::CpdIndex* cpd = nullptr, double sigma_target = strat::kDefaultSigmaTarget);

FeatureRow feature_row(const AssetFeatures& f, std::size_t row, const FeatureConfig& config);

}  // namespace cpdmom::dmn
