#include "cpdmom/strategies.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cpdmom/errors.hpp"
#include "cpdmom/ewm.hpp"

namespace cpdmom::strat {

double sgn(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

std::optional<double> trailing_return(std::span<const double> prices, std::size_t t, int k) {
  if (k < 1 || t >= prices.size() || t < static_cast<std::size_t>(k)) return std::nullopt;
  return prices[t] / prices[t - static_cast<std::size_t>(k)] - 1.0;
}

double position_long_only() { return 1.0; }

std::optional<double> position_moskowitz(std::span<const double> prices, std::size_t t) {
  const auto annual = trailing_return(prices, t, 252);
  if (!annual) return std::nullopt;
  return sgn(*annual);
}

std::optional<double> position_intermediate(std::span<const double> prices, std::size_t t, double w) {
  if (w < 0.0 || w > 1.0) throw ValidationError("intermediate weight must lie in [0, 1]");
  const auto annual = trailing_return(prices, t, 252);
  const auto monthly = trailing_return(prices, t, 21);
  if (!annual || !monthly) return std::nullopt;
  return (1.0 - w) * sgn(*annual) + w * sgn(*monthly);
}

namespace {

// Sample std of v[end+1-n .. end]; NaN if the window is incomplete.
double rolling_sample_std(std::span<const double> v, std::size_t end, int n) {
  const auto un = static_cast<std::size_t>(n);
  if (end + 1 < un) return std::nan("");
  const auto first = v.begin() + static_cast<std::ptrdiff_t>(end + 1 - un);
  const auto last = v.begin() + static_cast<std::ptrdiff_t>(end + 1);
  double mean = 0.0;
  for (auto it = first; it != last; ++it) {
    if (!std::isfinite(*it)) return std::nan("");
    mean += *it;
  }
  mean /= n;
  double ss = 0.0;
  for (auto it = first; it != last; ++it) ss += (*it - mean) * (*it - mean);
  return std::sqrt(ss / (n - 1));
}

}  // namespace

MacdSignal macd_signal(std::span<const double> prices, int short_span, int long_span, const MacdParams& params) {
  if (short_span <= 0 || long_span <= short_span) throw ValidationError("MACD pair needs 0 < S < L");
  const std::size_t n = prices.size();
  std::vector<double> q(n, std::nan(""));
  EwmStats fast(1.0 / short_span), slow(1.0 / long_span);
  for (std::size_t t = 0; t < n; ++t) {
    fast.push(prices[t]);
    slow.push(prices[t]);
    const double sd = rolling_sample_std(prices, t, params.price_std_window);
    if (std::isfinite(sd) && sd > 0.0) q[t] = (fast.mean() - slow.mean()) / sd;
  }
  MacdSignal out;
  out.y.assign(n, 0.0);
  out.warmup.assign(n, true);
  for (std::size_t t = 0; t < n; ++t) {
    if (!std::isfinite(q[t])) continue;
    const double sd = rolling_sample_std(q, t, params.signal_std_window);
    if (std::isfinite(sd) && sd > 0.0) {
      out.y[t] = q[t] / sd;
      out.warmup[t] = false;
    }
  }
  return out;
}

double macd_response(double y) { return y * std::exp(-y * y / 4.0) / 0.89; }

std::vector<double> position_macd(std::span<const double> prices, const MacdParams& params) {
  std::vector<double> x(prices.size(), 0.0);
  std::vector<bool> defined(prices.size(), true);
  for (const auto& [s, l] : params.pairs) {
    const auto sig = macd_signal(prices, s, l, params);
    for (std::size_t t = 0; t < prices.size(); ++t) {
      if (sig.warmup[t]) defined[t] = false;
      x[t] += macd_response(sig.y[t]);
    }
  }
  const double k = static_cast<double>(params.pairs.size());
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = defined[t] ? x[t] / k : std::nan("");
  return x;
}

std::optional<double> captured_return(double position, double sigma, double next_return, double sigma_target) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) return std::nullopt;
  return position * (sigma_target / sigma) * next_return;
}

double portfolio_return(std::span<const double> asset_returns) {
  if (asset_returns.empty()) throw InsufficientDataError("portfolio return over zero assets");
  return std::accumulate(asset_returns.begin(), asset_returns.end(), 0.0) / static_cast<double>(asset_returns.size());
}

std::string StrategySpec::name() const {
  char buf[64];
  switch (kind) {
    case StrategyKind::long_only:
      return "long_only";
    case StrategyKind::moskowitz:
      return "moskowitz";
    case StrategyKind::intermediate:
      std::snprintf(buf, sizeof buf, "intermediate:w=%g", w);
      return buf;
    case StrategyKind::macd:
      return "macd";
    case StrategyKind::lstm:
      return "lstm";
    case StrategyKind::lstm_cpd:
      return cpd_lookback > 0 ? "lstm_cpd:lbw=" + std::to_string(cpd_lookback) : "lstm_cpd:lbw=opt";
  }
  return "?";
}

std::string StrategySpec::group() const {
  switch (kind) {
    case StrategyKind::long_only:
    case StrategyKind::macd:
      return "Reference";
    case StrategyKind::moskowitz:
    case StrategyKind::intermediate:
      return "TSMOM";
    case StrategyKind::lstm:
      return "LSTM";
    case StrategyKind::lstm_cpd:
      return "LSTM w/ CPD";
  }
  return "?";
}

StrategySpec parse_strategy(const std::string& text) {
  StrategySpec s;
  if (text == "long_only") {
    s.kind = StrategyKind::long_only;
  } else if (text == "moskowitz") {
    s.kind = StrategyKind::moskowitz;
  } else if (text == "macd") {
    s.kind = StrategyKind::macd;
  } else if (text == "lstm") {
    s.kind = StrategyKind::lstm;
  } else if (text.rfind("intermediate:w=", 0) == 0) {
    s.kind = StrategyKind::intermediate;
    const std::string v = text.substr(15);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s.w);
    if (ec != std::errc{} || p != v.data() + v.size() || s.w < 0.0 || s.w > 1.0) {
      throw ConfigError("bad intermediate weight in '" + text + "' (need 0 <= w <= 1)");
    }
  } else if (text.rfind("lstm_cpd:lbw=", 0) == 0) {
    s.kind = StrategyKind::lstm_cpd;
    const std::string v = text.substr(13);
    if (v == "opt") {
      s.cpd_lookback = 0;
    } else {
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s.cpd_lookback);
      if (ec != std::errc{} || p != v.data() + v.size() || s.cpd_lookback < 2) {
        throw ConfigError("bad lookback in '" + text + "'");
      }
    }
  } else {
    throw ConfigError("unknown strategy '" + text + "'");
  }
  return s;
}

std::vector<double> classical_positions(const StrategySpec& spec, const data::AssetFrame& frame,
                                        const MacdParams& macd) {
  const std::size_t n = frame.size();
  std::vector<double> x(n, std::nan(""));
  switch (spec.kind) {
    case StrategyKind::long_only:
      std::fill(x.begin(), x.end(), position_long_only());
      break;
    case StrategyKind::moskowitz:
      for (std::size_t t = 0; t < n; ++t) x[t] = position_moskowitz(frame.prices, t).value_or(std::nan(""));
      break;
    case StrategyKind::intermediate:
      for (std::size_t t = 0; t < n; ++t) {
        x[t] = position_intermediate(frame.prices, t, spec.w).value_or(std::nan(""));
      }
      break;
    case StrategyKind::macd:
      x = position_macd(frame.prices, macd);
      break;
    case StrategyKind::lstm:
    case StrategyKind::lstm_cpd:
      throw ValidationError("learned strategy '" + spec.name() + "' has no classical position rule");
  }
  return x;
}

}  // namespace cpdmom::strat
