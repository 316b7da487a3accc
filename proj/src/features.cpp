#include "cpdmom/features.hpp"

#include <cmath>

#include "cpdmom/errors.hpp"

namespace cpdmom::dmn {

std::vector<double> FeatureRow::values() const {
  std::vector<double> v(norm_returns);
  v.insert(v.end(), macd.begin(), macd.end());
  if (cpd_nu) v.push_back(*cpd_nu);
  if (cpd_gamma) v.push_back(*cpd_gamma);
  return v;
}

AssetFeatures build_features(const data::AssetFrame& frame, const FeatureConfig& config, const cpd::CpdIndex* cpd,
                             double sigma_target) {
  if (config.cpd_lookback > 0 && cpd == nullptr) {
    throw ValidationError("features need changepoint inputs (lookback " + std::to_string(config.cpd_lookback) +
                          ") but no CPD cache was given");
  }
  const std::size_t n = frame.size();
  const int dim = config.size();

  std::vector<strat::MacdSignal> macd;
  for (const auto& [s, l] : config.macd.pairs) macd.push_back(strat::macd_signal(frame.prices, s, l, config.macd));

  int max_offset = 0;
  for (int k : config.return_offsets) max_offset = std::max(max_offset, k);

  AssetFeatures out;
  out.symbol = frame.symbol;
  std::vector<Eigen::VectorXd> cols;
  for (std::size_t t = static_cast<std::size_t>(max_offset); t < n; ++t) {
    const double sigma = frame.sigma[t];
    if (!(sigma > 0.0) || !std::isfinite(sigma)) continue;
    bool ready = true;
    for (const auto& m : macd) ready = ready && !m.warmup[t];
    if (!ready) continue;

    Eigen::VectorXd col(dim);
    const double daily_sigma = sigma / std::sqrt(data::kTradingDaysPerYear);
    int j = 0;
    for (int k : config.return_offsets) {
      const double r = *strat::trailing_return(frame.prices, t, k);
      col[j++] = r / (daily_sigma * std::sqrt(static_cast<double>(k)));
    }
    for (const auto& m : macd) col[j++] = m.y[t];
    if (config.cpd_lookback > 0) {
      const auto* row = cpd->find(frame.symbol, config.cpd_lookback, frame.dates[t]);
      if (!row) {
        throw ValidationError("CPD cache has no row for (" + frame.symbol + ", " + format_date(frame.dates[t]) +
                              ", lookback " + std::to_string(config.cpd_lookback) + "); run the cpd stage first");
      }
      col[j++] = row->nu;
      col[j++] = row->gamma;
    }
    if (!col.allFinite()) continue;

    out.dates.push_back(frame.dates[t]);
    out.frame_index.push_back(t);
    if (t + 1 < n) {
      out.target_dates.push_back(frame.dates[t + 1]);
      out.target.push_back(sigma_target / sigma * frame.returns[t + 1]);
    } else {
      out.target_dates.push_back(frame.dates[t]);
      out.target.push_back(std::nan(""));
    }
    cols.push_back(std::move(col));
  }
  out.x.resize(dim, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.x.col(static_cast<Eigen::Index>(i)) = cols[i];
  return out;
}

FeatureRow feature_row(const AssetFeatures& f, std::size_t row, const FeatureConfig& config) {
  FeatureRow r;
  r.symbol = f.symbol;
  r.date = f.dates.at(row);
  const auto col = f.x.col(static_cast<Eigen::Index>(row));
  Eigen::Index j = 0;
  for (std::size_t k = 0; k < config.return_offsets.size(); ++k) r.norm_returns.push_back(col[j++]);
  for (std::size_t k = 0; k < config.macd.pairs.size(); ++k) r.macd.push_back(col[j++]);
  if (config.cpd_lookback > 0) {
    r.cpd_nu = col[j++];
    r.cpd_gamma = col[j++];
  }
  return r;
}

}  // namespace cpdmom::dmn
