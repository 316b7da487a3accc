#include <cmath>
#include <fstream>

#include "doctest.h"

#include "cpdmom/data.hpp"
#include "cpdmom/errors.hpp"
#include "cpdmom/ewm.hpp"
#include "support.hpp"

using namespace cpdmom;
using namespace cpdmom::data;

namespace {

// Direct weighted sums over the whole history.
struct DirectEwm {
  double mean, var;
};
DirectEwm direct_ewm(const std::vector<double>& x, double alpha) {
  const std::size_t n = x.size();
  double w_sum = 0.0, w_sq = 0.0, m = 0.0;
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = std::pow(1.0 - alpha, static_cast<double>(n - 1 - k));
    w_sum += w[k];
    w_sq += w[k] * w[k];
    m += w[k] * x[k];
  }
  m /= w_sum;
  double ss = 0.0;
  for (std::size_t k = 0; k < n; ++k) ss += w[k] * (x[k] - m) * (x[k] - m);
  return {m, ss / (w_sum - w_sq / w_sum)};
}

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto dir = testing::scratch_dir(name);
  const auto p = dir / "prices.csv";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("load_prices reads a minimal file") {
  const auto p = write_file("load_min", "symbol,date,close\nA,2020-01-01,100\nA,2020-01-02,105\n");
  const auto m = load_prices(p);
  REQUIRE(m.size() == 1);
  CHECK(m.at("A").size() == 2);
  CHECK(m.at("A").closes[1] == 105.0);
}

TEST_CASE("load_prices rejects a negative close") {
  const auto p = write_file("load_neg", "symbol,date,close\nA,2020-01-01,-3\n");
  CHECK_THROWS_AS(load_prices(p), ValidationError);
}

TEST_CASE("load_prices rejects malformed rows with the line number") {
  const auto p = write_file("load_bad", "symbol,date,close\nA,2020-01-01,100\nA,2020-13-01,101\n");
  try {
    load_prices(p);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("load_prices sorts rows and rejects duplicate dates") {
  auto p = write_file("load_sort", "symbol,date,close\nA,2020-01-03,102\nA,2020-01-01,100\nA,2020-01-02,101\n");
  const auto m = load_prices(p);
  CHECK(m.at("A").closes == std::vector<double>{100, 101, 102});
  p = write_file("load_dup", "symbol,date,close\nA,2020-01-01,100\nA,2020-01-01,101\n");
  CHECK_THROWS_AS(load_prices(p), ValidationError);
}

TEST_CASE("a 50-asset file in the futures universe loads as 50 series") {
  std::string text = "symbol,date,close\n";
  for (const auto& m : futures_universe()) {
    text += std::string(m.symbol) + ",2020-01-01,100\n" + m.symbol + ",2020-01-02,101\n";
  }
  const auto loaded = load_prices(write_file("load_50", text));
  CHECK(futures_universe().size() == 50);
  CHECK(loaded.size() == 50);
}

TEST_CASE("write_prices round-trips through load_prices") {
  const auto dir = testing::scratch_dir("roundtrip");
  const auto a = testing::series_from("A", {100, 101.5, 99.25});
  const auto b = testing::series_from("B", {10, 11});
  write_prices(dir / "p.csv", {a, b});
  const auto m = load_prices(dir / "p.csv");
  CHECK(m.at("A").closes == a.closes);
  CHECK(m.at("B").dates == b.dates);
}

TEST_CASE("arithmetic returns") {
  CHECK(arithmetic_returns(testing::series_from("A", {100, 105})).values == std::vector<double>{0.05});
  CHECK(arithmetic_returns(testing::series_from("A", {100, 100})).values == std::vector<double>{0.0});
  const auto r = arithmetic_returns(testing::series_from("A", {100, 105, 84}));
  CHECK(r.values[0] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(r.values[1] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(r.dates.size() == 2);
}

TEST_CASE("returns and cumulative reconstruction recover prices") {
  const auto z = testing::gaussian(500, 0.0003, 0.012, 3);
  std::vector<double> closes = {50.0};
  for (double v : z) closes.push_back(closes.back() * (1.0 + v));
  const auto p = testing::series_from("A", closes);
  const auto back = cumulative_prices(arithmetic_returns(p), p.dates.front(), p.closes.front());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(back.closes[i] / p.closes[i] - 1.0) < 1e-10);
  }
}

TEST_CASE("ewm volatility of a constant return decays to zero") {
  const auto v = ewm_volatility(testing::returns_from("A", std::vector<double>(100, 0.01)));
  CHECK(v.sigma.back() < 1e-12);
  CHECK(v.warmup[8]);
  CHECK_FALSE(v.warmup[9]);
}

TEST_CASE("ewm volatility of iid noise approaches the population value") {
  const auto v = ewm_volatility(testing::returns_from("A", testing::gaussian(1000, 0.0, 0.01, 17)));
  const double target = 0.01 * std::sqrt(252.0);
  CHECK(v.sigma.back() == doctest::Approx(target).epsilon(0.15));
}

TEST_CASE("ewm volatility of two returns matches the two-term closed form") {
  const auto v = ewm_volatility(testing::returns_from("A", {0.0, 0.02}), 60);
  const double alpha = 2.0 / 61.0;
  const double w0 = 1.0 - alpha, w1 = 1.0;
  const double m = (w0 * 0.0 + w1 * 0.02) / (w0 + w1);
  const double num = w0 * m * m + w1 * (0.02 - m) * (0.02 - m);
  const double den = (w0 + w1) - (w0 * w0 + w1 * w1) / (w0 + w1);
  CHECK(v.sigma[0] == 0.0);
  CHECK(v.sigma[1] == doctest::Approx(std::sqrt(num / den) * std::sqrt(252.0)).epsilon(1e-12));
}

TEST_CASE("running EWM statistics match direct weighted sums") {
  const auto x = testing::gaussian(300, 0.1, 2.0, 5);
  const double alpha = 1.0 - std::exp(std::log(0.5) / 20.0);
  EwmStats s(alpha);
  for (std::size_t n = 0; n < x.size(); ++n) {
    s.push(x[n]);
    if (n < 1) continue;
    const auto d = direct_ewm(std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n + 1)), alpha);
    CHECK(s.mean() == doctest::Approx(d.mean).epsilon(1e-10));
    CHECK(s.variance() == doctest::Approx(d.var).epsilon(1e-10));
  }
}

TEST_CASE("ewm volatility is causal") {
  const auto full = testing::returns_from("A", testing::gaussian(400, 0.0, 0.01, 8));
  auto cut = full;
  cut.dates.resize(250);
  cut.values.resize(250);
  const auto a = ewm_volatility(full);
  const auto b = ewm_volatility(cut);
  for (std::size_t i = 0; i < 250; ++i) CHECK(a.sigma[i] == b.sigma[i]);
}

TEST_CASE("winsorize leaves small moves untouched") {
  std::vector<double> x;
  for (int i = 0; i < 200; ++i) x.push_back(i % 2 ? 0.01 : -0.01);
  CHECK(winsorize(testing::returns_from("A", x)).values == x);
}

TEST_CASE("winsorize clamps a spike using the EWM stats of prior values") {
  std::vector<double> x = {0.01, -0.012, 0.008, -0.009, 0.011, -0.01, 0.0, 0.0, 0.0, 0.0};
  const double hl = 252.0;
  const double alpha = 1.0 - std::exp(std::log(0.5) / hl);
  const auto before = direct_ewm(std::vector<double>(x.begin(), x.begin() + 6), alpha);
  const double sd = std::sqrt(before.var);
  x[6] = before.mean + 20.0 * sd;
  const auto out = winsorize(testing::returns_from("A", x), hl, 5.0).values;
  CHECK(out[6] == doctest::Approx(before.mean + 5.0 * sd).epsilon(1e-12));
  for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == x[i]);
  for (std::size_t i = 7; i < x.size(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("winsorize of zeros is zeros and winsorize is idempotent") {
  CHECK(winsorize(testing::returns_from("A", std::vector<double>(50, 0.0))).values == std::vector<double>(50, 0.0));
  auto x = testing::gaussian(600, 0.0, 0.01, 21);
  x[100] = 0.4;
  x[300] = -0.5;
  x[301] = 0.3;
  const auto once = winsorize(testing::returns_from("A", x));
  const auto twice = winsorize(once);
  CHECK(once.values[100] < 0.4);
  CHECK(once.values == twice.values);
}

TEST_CASE("standardize_window") {
  const auto r = testing::returns_from("A", {1, 2, 3});
  const auto w = standardize_window(r, std::size_t{2}, 2);
  CHECK(w.values[0] == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(w.values[1] == doctest::Approx(0.0));
  CHECK(w.values[2] == doctest::Approx(1.2247).epsilon(1e-4));
  CHECK(standardize_window(r, r.dates[2], 2).values == w.values);
  CHECK_THROWS_AS(standardize_window(testing::returns_from("A", {5, 5, 5}), std::size_t{2}, 2), DegenerateWindowError);
  CHECK_THROWS_AS(standardize_window(r, std::size_t{1}, 2), InsufficientDataError);
}

TEST_CASE("standardized windows have mean 0 and unit variance") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto r = testing::returns_from("A", testing::gaussian(80, 0.001 * seed, 0.02 + 0.001 * seed, seed));
    const auto w = standardize_window(r, std::size_t{79}, 10 + static_cast<int>(seed));
    double m = 0.0, v = 0.0;
    for (double x : w.values) m += x;
    m /= static_cast<double>(w.values.size());
    for (double x : w.values) v += (x - m) * (x - m);
    v /= static_cast<double>(w.values.size());
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-8);
  }
}

TEST_CASE("generate_synthetic") {
  RegimeSpec flat;
  flat.segments = {{100, 0.0, 0.0}};
  const auto p = generate_synthetic(flat);
  CHECK(p.size() == 101);
  for (double c : p.closes) CHECK(c == 100.0);

  RegimeSpec two;
  two.seed = 7;
  two.segments = {{50, 0.0, 0.001}, {50, 0.0, 0.02}};
  const auto q = generate_synthetic(two);
  const auto r = arithmetic_returns(q).values;
  auto sd = [](auto b, auto e) {
    const double n = static_cast<double>(e - b);
    double m = 0.0, s = 0.0;
    for (auto it = b; it != e; ++it) m += *it;
    m /= n;
    for (auto it = b; it != e; ++it) s += (*it - m) * (*it - m);
    return std::sqrt(s / (n - 1));
  };
  CHECK(sd(r.begin() + 50, r.end()) > 5.0 * sd(r.begin(), r.begin() + 50));

  const auto again = generate_synthetic(two);
  CHECK(again.closes == q.closes);
  CHECK(again.dates == q.dates);

  RegimeSpec bad;
  CHECK_THROWS_AS(generate_synthetic(bad), ValidationError);
  bad.segments = {{10, 0.0, -1.0}};
  CHECK_THROWS_AS(generate_synthetic(bad), ValidationError);
}

TEST_CASE("regime universe is deterministic and skips weekends") {
  UniverseSpec u;
  u.n_assets = 3;
  u.n_days = 300;
  const auto a = make_regime_universe(u);
  const auto b = make_regime_universe(u);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto pa = generate_synthetic(a[i]);
    CHECK(pa.closes == generate_synthetic(b[i]).closes);
    CHECK(pa.size() == 301);
    for (Date d : pa.dates) {
      const std::chrono::weekday wd{d};
      CHECK(wd != std::chrono::Saturday);
      CHECK(wd != std::chrono::Sunday);
    }
  }
}

TEST_CASE("prepare_asset aligns returns and vol on the price axis") {
  const auto p = testing::regime_asset("A", 300, 100, 0.001, 0.01, 4);
  const auto f = prepare_asset(p);
  REQUIRE(f.size() == p.size());
  CHECK(std::isnan(f.returns[0]));
  CHECK(std::isnan(f.sigma[5]));
  CHECK(f.sigma[50] > 0.0);
  const auto back = f.return_series();
  CHECK(back.size() == p.size() - 1);
  for (std::size_t t = 1; t < f.size(); ++t) {
    CHECK(f.prices[t] / f.prices[t - 1] - 1.0 == doctest::Approx(f.returns[t]).epsilon(1e-9));
  }
}

TEST_CASE("dates parse strictly") {
  CHECK(format_date(parse_date("2020-02-29")) == "2020-02-29");
  CHECK_THROWS_AS(parse_date("2021-02-29"), ParseError);
  CHECK_THROWS_AS(parse_date("2020-1-01"), ParseError);
  CHECK_THROWS_AS(parse_date("2020-01-01x"), ParseError);
  CHECK(next_business_day(make_date(2020, 1, 3)) == make_date(2020, 1, 6));
}
