#pragma once

// Classical time-series momentum position rules and the volatility-scaled
// return they earn. Positions are decided at the close of day t; they earn
// the return into t+1.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpdmom/data.hpp"

namespace cpdmom::strat {

inline constexpr double kDefaultSigmaTarget = 0.15;

// sgn with sgn(0) = 0.
double sgn(double x);

// p_t / p_{t-k} - 1; nullopt when t < k.
std::optional<double> trailing_return(std::span<const double> prices, std::size_t t, int k);

double position_long_only();

// sgn of the trailing 252-day return; nullopt without a year of history.
std::optional<double> position_moskowitz(std::span<const double> prices, std::size_t t);

// (1 - w) sgn(r_{t-252,t}) + w sgn(r_{t-21,t}).
std::optional<double> position_intermediate(std::span<const double> prices, std::size_t t, double w);

struct MacdParams {
  std::vector<std::pair<int, int>> pairs = {{8, 24}, {16, 28}, {32, 96}};
  int price_std_window = 63;
  int signal_std_window = 252;
};

struct MacdSignal {
  std::vector<double> y;     // 0 where undefined
  std::vector<bool> warmup;  // true where y is undefined
};

// Volatility-normalized moving-average crossover for one (short, long)
// pair over the whole series, causally:
//   q_t = (EWMA_S(p) - EWMA_L(p))_t / std(p_{t-62..t})
//   y_t = q_t / std(q_{t-251..t})
// EWMAs use half-life log(0.5)/log(1 - 1/S), i.e. decay 1/S, with
// normalized weights. Rolling stds are sample (n-1) stds over full windows.
MacdSignal macd_signal(std::span<const double> prices, int short_span, int long_span, const MacdParams& params = {});

// y exp(-y^2/4) / 0.89; peaks at y = sqrt(2).
double macd_response(double y);

// Mean response over all pairs per day; NaN while any pair is warming up.
std::vector<double> position_macd(std::span<const double> prices, const MacdParams& params = {});

// X_t (sigma_tgt / sigma_t) r_{t+1}; nullopt if sigma_t is not positive.
std::optional<double> captured_return(double position, double sigma, double next_return,
                                      double sigma_target = kDefaultSigmaTarget);

// Equal-weight mean over the assets with data; throws when there are none.
double portfolio_return(std::span<const double> asset_returns);

// --- strategy names ------------------------------------------------------

enum class StrategyKind { long_only, moskowitz, intermediate, macd, lstm, lstm_cpd };

struct StrategySpec {
  StrategyKind kind = StrategyKind::long_only;
  double w = 0.0;        // intermediate
  int cpd_lookback = 0;  // lstm_cpd; 0 means searched over the grid
  std::string name() const;
  std::string group() const;  // Reference | TSMOM | LSTM | LSTM w/ CPD
  bool learned() const { return kind == StrategyKind::lstm || kind == StrategyKind::lstm_cpd; }
};

// long_only | moskowitz | intermediate:w=<float> | macd | lstm | lstm_cpd:lbw=<int|opt>
StrategySpec parse_strategy(const std::string& text);

// Classical positions over a prepared frame; NaN where the rule is undefined.
std::vector<double> classical_positions(const StrategySpec& spec, const data::AssetFrame& frame,
                                        const MacdParams& macd = {});

}  // namespace cpdmom::strat
