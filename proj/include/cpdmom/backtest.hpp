#pragma once

// Expanding-window experiments, the performance table, volatility rescaling,
// turnover costs and position diagnostics.

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpdmom/cpd.hpp"
#include "cpdmom/data.hpp"
#include "cpdmom/lstm.hpp"
#include "cpdmom/strategies.hpp"

namespace cpdmom::bt {

// Half-open date spans [start, end).
struct Window {
  Date train_start{}, train_end{};
  Date test_start{}, test_end{};
};

// Train on [first, first + initial), test the next `step` years, then grow
// the training span by `step` and repeat while a full test span fits.
std::vector<Window> plan_windows(int first_year, int last_year, int step_years = 5, int initial_train_years = 5);

struct MetricsRow {
  double returns_ann = 0.0;
  double vol_ann = 0.0;
  double sharpe = 0.0;
  double downside_dev_ann = 0.0;
  double sortino = 0.0;
  double mdd = 0.0;
  double calmar = 0.0;
  double pct_positive = 0.0;
  double avg_p_over_avg_l = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "returns,vol,sharpe,downside_dev,sortino,mdd,calmar,pct_positive,avg_p_over_avg_l";

// Strict mode throws UndefinedMetricError for a zero denominator; otherwise
// the affected ratio is NaN. Fewer than two returns always throws.
MetricsRow compute_metrics(std::span<const double> daily, bool strict = true);

// Scales the series to sigma_tgt annualized vol (population std).
std::vector<double> rescale_to_target_vol(std::span<const double> daily, double sigma_target = 0.15);

// R_t - C sigma_tgt |X_t / sigma_t - X_{t-1} / sigma_{t-1}|, with the
// position before the first day taken as flat. C is a decimal (2 bps = 2e-4).
std::vector<double> transaction_adjusted_returns(std::span<const double> captured, std::span<const double> positions,
                                                 std::span<const double> sigma, double sigma_target, double cost);

// One asset's record inside a test span. Index i is a trading decision made
// at the close of position_dates[i] and earning captured[i] on return_dates[i].
struct AssetTrack {
  std::vector<Date> position_dates;
  std::vector<Date> return_dates;
  std::vector<double> positions;
  std::vector<double> sigma;
  std::vector<double> captured;
};

struct StrategyReturns {
  std::string strategy;
  std::string group;
  std::map<std::string, AssetTrack> assets;
  std::vector<Date> dates;         // return dates with at least one asset
  std::vector<double> portfolio;   // equal-weight mean across those assets

  void rebuild_portfolio();
};

struct RunInputs {
  const std::vector<data::AssetFrame>* frames = nullptr;
  std::vector<std::string> assets;    // empty: every frame
  const dmn::LstmModel* model = nullptr;
  const cpd::CpdIndex* cpd = nullptr;
  double sigma_target = strat::kDefaultSigmaTarget;
  strat::MacdParams macd;
  int sequence_length = 63;
  int workers = 0;
};

// Daily returns of one strategy over the test span of `window`. Learned
// strategies read positions from the model's last output over the trailing
// `sequence_length` feature rows.
StrategyReturns run_strategy(const strat::StrategySpec& spec, const RunInputs& in, const Window& window);

// Same results as run_strategy for learned strategies, one day at a time.
StrategyReturns run_strategy_serial(const strat::StrategySpec& spec, const RunInputs& in, const Window& window);

// Concatenates windows in order into one stream.
StrategyReturns concatenate(const std::vector<StrategyReturns>& parts);

struct CostPoint {
  double c_bps = 0.0;
  double sharpe = 0.0;
};

// Portfolio Sharpe after turnover costs for each C (bps), on the same data.
std::vector<CostPoint> cost_sweep(const StrategyReturns& r, double sigma_target,
                                  const std::vector<double>& c_bps = {0, 1, 2, 3, 4, 5});

struct PositionMovingAverages {
  std::vector<double> slow;  // 252-day simple moving average, NaN until full
  std::vector<double> fast;  // 21-day
};
PositionMovingAverages position_diagnostics(std::span<const double> positions, int slow = 252, int fast = 21);

// Days flagged as changepoints for plot shading: nu >= threshold and at
// least `burn_in` days after the previous flagged day.
std::vector<bool> classify_changepoints(std::span<const double> nu, double threshold = 0.9, int burn_in = 63);

}  // namespace cpdmom::bt
