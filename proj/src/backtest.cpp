#include "cpdmom/backtest.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cpdmom/errors.hpp"
#include "cpdmom/features.hpp"

namespace cpdmom::bt {

std::vector<Window> plan_windows(int first_year, int last_year, int step_years, int initial_train_years) {
  if (step_years < 1 || initial_train_years < 1) throw ConfigError("window step and initial span must be positive");
  std::vector<Window> out;
  for (int test_from = first_year + initial_train_years; test_from + step_years <= last_year; test_from += step_years) {
    Window w;
    w.train_start = make_date(first_year, 1, 1);
    w.train_end = make_date(test_from, 1, 1);
    w.test_start = w.train_end;
    w.test_end = make_date(test_from + step_years, 1, 1);
    out.push_back(w);
  }
  if (out.empty()) {
    throw InsufficientDataError("span " + std::to_string(first_year) + "-" + std::to_string(last_year) +
                                " holds no complete train+test cycle");
  }
  return out;
}

MetricsRow compute_metrics(std::span<const double> r, bool strict) {
  const std::size_t n = r.size();
  if (n < 2) throw InsufficientDataError("metrics need at least two daily returns");
  const double nan = std::nan("");
  auto undefined = [&](const char* what) {
    if (strict) throw UndefinedMetricError(std::string(what) + " is undefined for this return series");
    return nan;
  };

  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0, down = 0.0, pos_sum = 0.0, neg_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  double equity = 1.0, peak = 1.0, mdd = 0.0;
  for (double v : r) {
    ss += (v - mean) * (v - mean);
    if (v > 0.0) {
      ++pos;
      pos_sum += v;
    } else if (v < 0.0) {
      ++neg;
      neg_sum += v;
      down += v * v;
    }
    equity *= 1.0 + v;
    peak = std::max(peak, equity);
    mdd = std::max(mdd, (peak - equity) / peak);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  const double root = std::sqrt(252.0);

  MetricsRow m;
  m.returns_ann = 252.0 * mean;
  m.vol_ann = root * sd;
  m.sharpe = sd > 0.0 ? root * mean / sd : undefined("Sharpe ratio (zero volatility)");
  m.downside_dev_ann = root * std::sqrt(down / static_cast<double>(n));
  m.sortino = m.downside_dev_ann > 0.0 ? m.returns_ann / m.downside_dev_ann : undefined("Sortino ratio (no losses)");
  m.mdd = mdd;
  m.calmar = mdd > 0.0 ? m.returns_ann / mdd : undefined("Calmar ratio (zero drawdown)");
  m.pct_positive = 100.0 * static_cast<double>(pos) / static_cast<double>(n);
  m.avg_p_over_avg_l = (pos > 0 && neg > 0) ? (pos_sum / static_cast<double>(pos)) /
                                                  std::abs(neg_sum / static_cast<double>(neg))
                                            : undefined("Ave. P / Ave. L (no gains or no losses)");
  return m;
}

std::vector<double> rescale_to_target_vol(std::span<const double> r, double sigma_target) {
  if (r.size() < 2) throw InsufficientDataError("rescaling needs at least two returns");
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(r.size()));
  if (!(sd > 0.0)) throw UndefinedMetricError("cannot rescale a series with zero realized volatility");
  const double k = sigma_target / (std::sqrt(252.0) * sd);
  std::vector<double> out(r.begin(), r.end());
  for (double& v : out) v *= k;
  return out;
}

std::vector<double> transaction_adjusted_returns(std::span<const double> captured, std::span<const double> x,
                                                 std::span<const double> sigma, double sigma_target, double cost) {
  if (captured.size() != x.size() || x.size() != sigma.size()) {
    throw ValidationError("returns, positions and vols must have equal length");
  }
  if (cost < 0.0) throw ValidationError("transaction cost must be non-negative");
  std::vector<double> out(captured.begin(), captured.end());
  if (cost == 0.0) return out;
  double prev = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double scaled = x[i] / sigma[i];
    out[i] -= cost * sigma_target * std::abs(scaled - prev);
    prev = scaled;
  }
  return out;
}

void StrategyReturns::rebuild_portfolio() {
  std::map<Date, std::pair<double, int>> acc;
  for (const auto& [sym, tr] : assets) {
    for (std::size_t i = 0; i < tr.return_dates.size(); ++i) {
      auto& a = acc[tr.return_dates[i]];
      a.first += tr.captured[i];
      ++a.second;
    }
  }
  dates.clear();
  portfolio.clear();
  for (const auto& [d, a] : acc) {
    dates.push_back(d);
    portfolio.push_back(a.first / a.second);
  }
}

namespace {

bool in_test(Date d, const Window& w) { return d >= w.test_start && d < w.test_end; }

std::vector<const data::AssetFrame*> select_frames(const RunInputs& in) {
  if (!in.frames) throw ValidationError("run_strategy needs price data");
  std::vector<const data::AssetFrame*> out;
  const std::set<std::string> wanted(in.assets.begin(), in.assets.end());
  for (const auto& f : *in.frames) {
    if (wanted.empty() || wanted.count(f.symbol)) out.push_back(&f);
  }
  return out;
}

void push_day(AssetTrack& tr, Date pos_date, Date ret_date, double x, double sigma, double captured) {
  tr.position_dates.push_back(pos_date);
  tr.return_dates.push_back(ret_date);
  tr.positions.push_back(x);
  tr.sigma.push_back(sigma);
  tr.captured.push_back(captured);
}

StrategyReturns run_classical(const strat::StrategySpec& spec, const RunInputs& in, const Window& w) {
  StrategyReturns out;
  out.strategy = spec.name();
  out.group = spec.group();
  for (const auto* f : select_frames(in)) {
    const auto x = strat::classical_positions(spec, *f, in.macd);
    AssetTrack tr;
    for (std::size_t t = 0; t + 1 < f->size(); ++t) {
      if (!in_test(f->dates[t + 1], w) || !std::isfinite(x[t]) || !std::isfinite(f->returns[t + 1])) continue;
      const auto c = strat::captured_return(x[t], f->sigma[t], f->returns[t + 1], in.sigma_target);
      if (!c) continue;
      push_day(tr, f->dates[t], f->dates[t + 1], x[t], f->sigma[t], *c);
    }
    if (!tr.captured.empty()) out.assets.emplace(f->symbol, std::move(tr));
  }
  out.rebuild_portfolio();
  return out;
}

struct LearnedItem {
  std::size_t asset;
  std::size_t row;
};

StrategyReturns run_learned(const strat::StrategySpec& spec, const RunInputs& in, const Window& w, bool parallel) {
  if (!in.model) throw ValidationError("strategy '" + spec.name() + "' needs a trained model; run the train stage");
  const auto frames = select_frames(in);
  const int tau = in.sequence_length;
  std::vector<dmn::AssetFeatures> feats;
  std::vector<LearnedItem> items;
  for (std::size_t a = 0; a < frames.size(); ++a) {
    feats.push_back(dmn::build_features(*frames[a], in.model->features, in.cpd, in.sigma_target));
    const auto& f = feats.back();
    if (f.x.rows() != in.model->params.input_size()) throw ValidationError("model and features disagree on width");
    for (std::size_t r = static_cast<std::size_t>(tau - 1); r < f.rows(); ++r) {
      if (in_test(f.target_dates[r], w) && std::isfinite(f.target[r])) items.push_back({a, r});
    }
  }

  std::vector<double> x(items.size());
  const auto n = static_cast<std::ptrdiff_t>(items.size());
  auto position = [&](std::ptrdiff_t k) {
    const auto& it = items[static_cast<std::size_t>(k)];
    const auto& m = feats[it.asset].x;
    const Eigen::MatrixXd seq = m.middleCols(static_cast<Eigen::Index>(it.row) - tau + 1, tau);
    const Eigen::VectorXd p = dmn::lstm_forward(in.model->params, seq);
    x[static_cast<std::size_t>(k)] = p[tau - 1];
  };
  if (parallel) {
    const int threads = in.workers > 0 ? in.workers : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t k = 0; k < n; ++k) position(k);
  } else {
    for (std::ptrdiff_t k = 0; k < n; ++k) position(k);
  }

  StrategyReturns out;
  out.strategy = spec.name();
  out.group = spec.group();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& f = feats[items[k].asset];
    const auto* frame = frames[items[k].asset];
    const std::size_t t = f.frame_index[items[k].row];
    push_day(out.assets[f.symbol], f.dates[items[k].row], f.target_dates[items[k].row], x[k], frame->sigma[t],
             x[k] * f.target[items[k].row]);
  }
  out.rebuild_portfolio();
  return out;
}

}  // namespace

StrategyReturns run_strategy(const strat::StrategySpec& spec, const RunInputs& in, const Window& window) {
  return spec.learned() ? run_learned(spec, in, window, true) : run_classical(spec, in, window);
}

StrategyReturns run_strategy_serial(const strat::StrategySpec& spec, const RunInputs& in, const Window& window) {
  return spec.learned() ? run_learned(spec, in, window, false) : run_classical(spec, in, window);
}

StrategyReturns concatenate(const std::vector<StrategyReturns>& parts) {
  StrategyReturns out;
  for (const auto& p : parts) {
    if (out.strategy.empty()) {
      out.strategy = p.strategy;
      out.group = p.group;
    }
    for (const auto& [sym, tr] : p.assets) {
      auto& dst = out.assets[sym];
      auto append = [](auto& a, const auto& b) { a.insert(a.end(), b.begin(), b.end()); };
      append(dst.position_dates, tr.position_dates);
      append(dst.return_dates, tr.return_dates);
      append(dst.positions, tr.positions);
      append(dst.sigma, tr.sigma);
      append(dst.captured, tr.captured);
    }
  }
  out.rebuild_portfolio();
  return out;
}

std::vector<CostPoint> cost_sweep(const StrategyReturns& r, double sigma_target, const std::vector<double>& c_bps) {
  std::vector<CostPoint> out;
  for (double c : c_bps) {
    if (c < 0.0) throw ValidationError("cost grid values must be non-negative");
    StrategyReturns adj;
    for (const auto& [sym, tr] : r.assets) {
      AssetTrack t = tr;
      t.captured = transaction_adjusted_returns(tr.captured, tr.positions, tr.sigma, sigma_target, c * 1e-4);
      adj.assets.emplace(sym, std::move(t));
    }
    adj.rebuild_portfolio();
    out.push_back({c, compute_metrics(adj.portfolio, false).sharpe});
  }
  return out;
}

PositionMovingAverages position_diagnostics(std::span<const double> x, int slow, int fast) {
  if (slow < 1 || fast < 1) throw ValidationError("moving-average lengths must be positive");
  auto sma = [&x](int len) {
    std::vector<double> out(x.size(), std::nan(""));
    double sum = 0.0;
    const auto ul = static_cast<std::size_t>(len);
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum += x[i];
      if (i >= ul) sum -= x[i - ul];
      if (i + 1 >= ul) out[i] = sum / len;
    }
    return out;
  };
  return {sma(slow), sma(fast)};
}

std::vector<bool> classify_changepoints(std::span<const double> nu, double threshold, int burn_in) {
  std::vector<bool> out(nu.size(), false);
  std::ptrdiff_t last = -static_cast<std::ptrdiff_t>(burn_in) - 1;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const auto si = static_cast<std::ptrdiff_t>(i);
    if (nu[i] >= threshold && si - last > burn_in) {
      out[i] = true;
      last = si;
    }
  }
  return out;
}

}  // namespace cpdmom::bt
