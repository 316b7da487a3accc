#include "cpdmom/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "cpdmom/errors.hpp"
#include "cpdmom/ewm.hpp"

namespace cpdmom::data {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

void validate(const PriceSeries& prices) {
  if (prices.dates.size() != prices.closes.size()) {
    throw ValidationError(prices.symbol + ": dates/closes length mismatch");
  }
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!std::isfinite(prices.closes[i]) || prices.closes[i] <= 0.0) {
      throw ValidationError(prices.symbol + ": non-positive or non-finite close on " +
                            format_date(prices.dates[i]));
    }
    if (i > 0 && prices.dates[i] <= prices.dates[i - 1]) {
      throw ValidationError(prices.symbol + ": dates not strictly increasing at " +
                            format_date(prices.dates[i]));
    }
  }
}

std::map<std::string, PriceSeries> load_prices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open price file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "symbol,date,close") {
    throw ParseError(path.string() + ":1: expected header 'symbol,date,close'");
  }

  struct Row {
    Date date;
    double close;
    std::size_t line;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto fields = split_commas(line);
    if (fields.size() != 3 || fields[0].empty()) {
      throw ParseError(where + ": expected 3 fields symbol,date,close");
    }
    Date d;
    try {
      d = parse_date(fields[1]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    const double close = parse_double(fields[2], where);
    if (!std::isfinite(close) || close <= 0.0) {
      throw ValidationError(where + ": close must be finite and positive");
    }
    rows[std::string(fields[0])].push_back({d, close, line_no});
  }

  std::map<std::string, PriceSeries> out;
  for (auto& [symbol, list] : rows) {
    std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    PriceSeries ps;
    ps.symbol = symbol;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].date == list[i - 1].date) {
        throw ValidationError(path.string() + ":" + std::to_string(list[i].line) + ": duplicate (" + symbol +
                              ", " + format_date(list[i].date) + ")");
      }
      ps.dates.push_back(list[i].date);
      ps.closes.push_back(list[i].close);
    }
    out.emplace(symbol, std::move(ps));
  }
  return out;
}

void write_prices(const std::filesystem::path& path, const std::vector<PriceSeries>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "symbol,date,close\n";
  char buf[64];
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", s.closes[i]);
      out << s.symbol << ',' << format_date(s.dates[i]) << ',' << buf << '\n';
    }
  }
}

ReturnSeries arithmetic_returns(const PriceSeries& prices) {
  if (prices.size() < 2) {
    throw InsufficientDataError(prices.symbol + ": need at least 2 prices for returns");
  }
  ReturnSeries r;
  r.symbol = prices.symbol;
  r.dates.assign(prices.dates.begin() + 1, prices.dates.end());
  r.values.resize(prices.size() - 1);
  for (std::size_t i = 1; i < prices.size(); ++i) {
    r.values[i - 1] = (prices.closes[i] - prices.closes[i - 1]) / prices.closes[i - 1];
  }
  return r;
}

VolSeries ewm_volatility(const ReturnSeries& returns, int span) {
  if (returns.size() == 0) throw InsufficientDataError(returns.symbol + ": no returns for volatility");
  if (span < 2) throw ValidationError("ewm volatility span must be >= 2");
  VolSeries v;
  v.symbol = returns.symbol;
  v.dates = returns.dates;
  v.sigma.resize(returns.size());
  v.warmup.resize(returns.size());
  auto stats = EwmStats::from_span(span);
  const double annualize = std::sqrt(kTradingDaysPerYear);
  for (std::size_t i = 0; i < returns.size(); ++i) {
    stats.push(returns.values[i]);
    v.sigma[i] = stats.count() < 2 ? 0.0 : stats.stddev() * annualize;
    v.warmup[i] = stats.count() < kVolWarmup;
  }
  return v;
}

ReturnSeries winsorize(const ReturnSeries& returns, double halflife, double clip) {
  if (!(halflife > 0.0) || !(clip > 0.0)) throw ValidationError("winsorize needs halflife > 0 and clip > 0");
  ReturnSeries out = returns;
  auto stats = EwmStats::from_halflife(halflife);
  for (auto& x : out.values) {
    if (stats.count() >= 2) {
      const double m = stats.mean();
      const double band = clip * stats.stddev();
      x = std::clamp(x, m - band, m + band);
    }
    stats.push(x);
  }
  return out;
}

StandardizedWindow standardize_window(const ReturnSeries& returns, std::size_t end_index, int lookback) {
  if (lookback < 1) throw ValidationError("lookback must be >= 1");
  if (end_index >= returns.size() || end_index < static_cast<std::size_t>(lookback)) {
    throw InsufficientDataError(returns.symbol + ": not enough returns for a window of lookback " +
                                std::to_string(lookback));
  }
  const std::size_t n = static_cast<std::size_t>(lookback) + 1;
  const auto first = returns.values.begin() + static_cast<std::ptrdiff_t>(end_index + 1 - n);
  StandardizedWindow w;
  w.symbol = returns.symbol;
  w.end_date = returns.dates[end_index];
  w.lookback = lookback;
  w.values.assign(first, first + static_cast<std::ptrdiff_t>(n));

  const double mean = std::accumulate(w.values.begin(), w.values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : w.values) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd >= 1e-12)) {
    throw DegenerateWindowError(returns.symbol + ": zero-variance window ending " + format_date(w.end_date));
  }
  for (double& x : w.values) x = (x - mean) / sd;
  return w;
}

StandardizedWindow standardize_window(const ReturnSeries& returns, Date end_date, int lookback) {
  const auto it = std::lower_bound(returns.dates.begin(), returns.dates.end(), end_date);
  if (it == returns.dates.end() || *it != end_date) {
    throw InsufficientDataError(returns.symbol + ": no return on " + format_date(end_date));
  }
  return standardize_window(returns, static_cast<std::size_t>(it - returns.dates.begin()), lookback);
}

PriceSeries cumulative_prices(const ReturnSeries& returns, Date start_date, double start_price) {
  PriceSeries p;
  p.symbol = returns.symbol;
  p.dates.reserve(returns.size() + 1);
  p.closes.reserve(returns.size() + 1);
  p.dates.push_back(start_date);
  p.closes.push_back(start_price);
  for (std::size_t i = 0; i < returns.size(); ++i) {
    p.dates.push_back(returns.dates[i]);
    p.closes.push_back(p.closes.back() * (1.0 + returns.values[i]));
  }
  return p;
}

ReturnSeries AssetFrame::return_series() const {
  ReturnSeries r;
  r.symbol = symbol;
  if (dates.size() < 2) return r;
  r.dates.assign(dates.begin() + 1, dates.end());
  r.values.assign(returns.begin() + 1, returns.end());
  return r;
}

AssetFrame prepare_asset(const PriceSeries& prices, const PrepOptions& options) {
  validate(prices);
  ReturnSeries r = arithmetic_returns(prices);
  if (options.winsorize) r = winsorize(r, options.winsorize_halflife, options.winsorize_clip);
  const VolSeries v = ewm_volatility(r, options.vol_span);

  AssetFrame f;
  f.symbol = prices.symbol;
  f.dates = prices.dates;
  f.prices = options.winsorize ? cumulative_prices(r, prices.dates.front(), prices.closes.front()).closes
                               : prices.closes;
  f.returns.assign(prices.size(), std::nan(""));
  f.sigma.assign(prices.size(), std::nan(""));
  for (std::size_t i = 0; i < r.size(); ++i) {
    f.returns[i + 1] = r.values[i];
    if (!v.warmup[i] && v.sigma[i] > 0.0) f.sigma[i + 1] = v.sigma[i];
  }
  return f;
}

void validate(const RegimeSpec& spec) {
  if (spec.segments.empty()) throw ValidationError("regime spec needs at least one segment");
  for (const auto& s : spec.segments) {
    if (s.length <= 0) throw ValidationError("regime segment length must be > 0");
    if (s.vol < 0.0 || !std::isfinite(s.vol)) throw ValidationError("regime segment vol must be >= 0");
    if (!std::isfinite(s.drift)) throw ValidationError("regime segment drift must be finite");
  }
  if (!(spec.start_price > 0.0)) throw ValidationError("start price must be > 0");
}

PriceSeries generate_synthetic(const RegimeSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  PriceSeries p;
  p.symbol = spec.symbol;
  Date d = spec.start_date;
  double price = spec.start_price;
  p.dates.push_back(d);
  p.closes.push_back(price);
  for (const auto& seg : spec.segments) {
    for (int k = 0; k < seg.length; ++k) {
      const double z = unit(rng);
      // Returns below -99% would produce a non-positive price.
      const double r = std::max(seg.drift + seg.vol * z, -0.99);
      price *= 1.0 + r;
      d = next_business_day(d);
      p.dates.push_back(d);
      p.closes.push_back(price);
    }
  }
  return p;
}

std::vector<RegimeSpec> make_regime_universe(const UniverseSpec& spec) {
  if (spec.n_assets < 1 || spec.n_days < 1 || spec.regime_length < 1) {
    throw ValidationError("universe spec needs positive asset count, day count and regime length");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& names = futures_universe();

  std::vector<RegimeSpec> out;
  for (int a = 0; a < spec.n_assets; ++a) {
    RegimeSpec rs;
    rs.symbol = a < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(a)].symbol
                                                   : "S" + std::to_string(a);
    rs.seed = rng();
    rs.start_date = spec.start_date;
    rs.start_price = 50.0 + 100.0 * unif(rng);
    int remaining = spec.n_days;
    // Random phase so regimes do not switch on the same day for every asset.
    int len = 1 + static_cast<int>(unif(rng) * spec.regime_length);
    while (remaining > 0) {
      const int n = std::min(len, remaining);
      const double sign = unif(rng) < 0.5 ? -1.0 : 1.0;
      const double vol_scale = 1.0 + spec.vol_spread * (unif(rng) - 0.5);
      const double vol = spec.base_vol * vol_scale;
      rs.segments.push_back({n, sign * spec.drift * vol_scale, vol});
      remaining -= n;
      len = spec.regime_length;
    }
    out.push_back(std::move(rs));
  }
  return out;
}

const std::vector<UniverseMember>& futures_universe() {
  static const std::vector<UniverseMember> members = {
      {"CC", "COCOA", 1995},
      {"DA", "MILK III, composite", 2000},
      {"GI", "GOLDMAN SAKS C. I.", 1995},
      {"JO", "ORANGE JUICE", 1995},
      {"KC", "COFFEE", 1995},
      {"KW", "WHEAT, KC", 1995},
      {"LB", "LUMBER", 1995},
      {"NR", "ROUGH RICE", 1995},
      {"SB", "SUGAR #11", 1995},
      {"ZA", "PALLADIUM, electronic", 1995},
      {"ZC", "CORN, electronic", 1995},
      {"ZF", "FEEDER CATTLE, electronic", 1995},
      {"ZG", "GOLD, electronic", 1995},
      {"ZH", "HEATING OIL, electronic", 1995},
      {"ZI", "SILVER, electronic", 1995},
      {"ZK", "COPPER, electronic", 1995},
      {"ZL", "SOYBEAN OIL, electronic", 1995},
      {"ZN", "NATURAL GAS, electronic", 1995},
      {"ZO", "OATS, electronic", 1995},
      {"ZP", "PLATINUM, electronic", 1995},
      {"ZR", "ROUGH RICE, electronic", 1995},
      {"ZT", "LIVE CATTLE, electronic", 1995},
      {"ZU", "CRUDE OIL, electronic", 1995},
      {"ZW", "WHEAT, electronic", 1995},
      {"ZZ", "LEAN HOGS, electronic", 1995},
      {"CA", "CAC40 INDEX", 2000},
      {"EN", "NASDAQ, MINI", 2005},
      {"ER", "RUSSELL 2000, MINI", 2005},
      {"ES", "S & P 500, MINI", 2000},
      {"LX", "FTSE 100 INDEX", 1995},
      {"MD", "S&P 400 (Mini electronic)", 1995},
      {"SC", "S & P 500, composite", 2000},
      {"SP", "S & P 500, day session", 1995},
      {"XU", "DOW JONES EUROSTOXX50", 2005},
      {"XX", "DOW JONES STOXX 50", 2005},
      {"YM", "Mini Dow Jones ($5.00)", 2005},
      {"DT", "EURO BOND (BUND)", 1995},
      {"FB", "T-NOTE, 5yr composite", 1995},
      {"TY", "T-NOTE, 10yr composite", 1995},
      {"UB", "EURO BOBL", 2005},
      {"US", "T-BONDS, composite", 1995},
      {"AN", "AUSTRALIAN $$, composite", 1995},
      {"BN", "BRITISH POUND, composite", 1995},
      {"CN", "CANADIAN $$, composite", 1995},
      {"DX", "US DOLLAR INDEX", 1995},
      {"FN", "EURO, composite", 1995},
      {"JN", "JAPANESE YEN, composite", 1995},
      {"MP", "MEXICAN PESO", 2000},
      {"NK", "NIKKEI INDEX", 1995},
      {"SN", "SWISS FRANC, composite", 1995},
  };
  return members;
}

}  // namespace cpdmom::data
