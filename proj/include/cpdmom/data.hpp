#pragma once

// Price/return series, their causal transforms, and synthetic regime data.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cpdmom/date.hpp"

namespace cpdmom::data {

inline constexpr double kTradingDaysPerYear = 252.0;

struct PriceSeries {
  std::string symbol;
  std::vector<Date> dates;     // strictly increasing
  std::vector<double> closes;  // finite, > 0

  std::size_t size() const { return dates.size(); }
};

// returns[i] is the arithmetic return from price i to price i+1 and is
// stamped with the later date.
struct ReturnSeries {
  std::string symbol;
  std::vector<Date> dates;
  std::vector<double> values;

  std::size_t size() const { return dates.size(); }
};

struct VolSeries {
  std::string symbol;
  std::vector<Date> dates;
  std::vector<double> sigma;  // annualized
  std::vector<bool> warmup;   // true while fewer than kVolWarmup observations seen

  std::size_t size() const { return dates.size(); }
};

inline constexpr std::size_t kVolWarmup = 10;

struct StandardizedWindow {
  std::string symbol;
  Date end_date{};
  int lookback = 0;
  std::vector<double> values;  // lookback + 1 entries, time offsets 0..lookback
};

struct RegimeSegment {
  int length = 0;      // days
  double drift = 0.0;  // daily mean return
  double vol = 0.0;    // daily return std
};

struct RegimeSpec {
  std::string symbol = "SYN";
  std::vector<RegimeSegment> segments;
  std::uint64_t seed = 0;
  double start_price = 100.0;
  Date start_date = make_date(2000, 1, 3);
};

// --- I/O -----------------------------------------------------------------

// Reads `symbol,date,close` rows. Rows may be in any order; each series is
// sorted by date on return.
std::map<std::string, PriceSeries> load_prices(const std::filesystem::path& path);
void write_prices(const std::filesystem::path& path, const std::vector<PriceSeries>& series);

void validate(const PriceSeries& prices);

// --- transforms ----------------------------------------------------------

ReturnSeries arithmetic_returns(const PriceSeries& prices);

// Exponentially weighted moving std with decay 2/(span+1), annualized by
// sqrt(252). Weights are normalized and the variance bias-corrected, so the
// first output is 0 and early values behave like a sample std.
VolSeries ewm_volatility(const ReturnSeries& returns, int span = 60);

// Clamps each value to ewm_mean +/- clip * ewm_std where the EWM statistics
// (given half-life) are computed from the already-winsorized values strictly
// before it. Values are passed through until two prior observations exist.
ReturnSeries winsorize(const ReturnSeries& returns, double halflife = 252.0, double clip = 5.0);

// Standardizes returns[end_index - l .. end_index] with population variance.
StandardizedWindow standardize_window(const ReturnSeries& returns, std::size_t end_index, int lookback);
StandardizedWindow standardize_window(const ReturnSeries& returns, Date end_date, int lookback);

// Rebuilds a price path from returns, anchored at `start_price` on `start_date`.
PriceSeries cumulative_prices(const ReturnSeries& returns, Date start_date, double start_price);

// Everything downstream works on one date axis per asset: index t is a
// price date, returns[t] the return into t (NaN at t = 0) and sigma[t] the
// annualized ex-ante vol known at the close of t (NaN while warming up).
struct AssetFrame {
  std::string symbol;
  std::vector<Date> dates;
  std::vector<double> prices;
  std::vector<double> returns;
  std::vector<double> sigma;

  std::size_t size() const { return dates.size(); }
  ReturnSeries return_series() const;  // drops the t = 0 placeholder
};

struct PrepOptions {
  int vol_span = 60;
  bool winsorize = true;
  double winsorize_halflife = 252.0;
  double winsorize_clip = 5.0;
};

// Returns are winsorized (if enabled) and the price path rebuilt from them so
// price-based signals see the same data.
AssetFrame prepare_asset(const PriceSeries& prices, const PrepOptions& options = {});

// --- synthetic data ------------------------------------------------------

void validate(const RegimeSpec& spec);
PriceSeries generate_synthetic(const RegimeSpec& spec);

// Universe of `n_assets` series, each a chain of regimes of `regime_length`
// days whose drift sign flips at random and whose daily vol drifts slowly
// around `base_vol`. Deterministic in `seed`.
struct UniverseSpec {
  int n_assets = 5;
  int n_days = 2016;
  int regime_length = 250;
  double drift = 0.0005;
  double base_vol = 0.01;
  double vol_spread = 0.5;  // vol is scaled by a factor in [1-spread/2, 1+spread/2] per regime
  std::uint64_t seed = 1;
  Date start_date = make_date(2010, 1, 4);
};
std::vector<RegimeSpec> make_regime_universe(const UniverseSpec& spec);

// Futures identifiers of a 50-contract diversified universe (commodities,
// equities, fixed income, FX) with the year each becomes tradable.
struct UniverseMember {
  const char* symbol;
  const char* description;
  int backtest_from;
};
const std::vector<UniverseMember>& futures_universe();

}  // namespace cpdmom::data
