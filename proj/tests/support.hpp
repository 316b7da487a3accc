#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cpdmom/data.hpp"

namespace testing {

inline cpdmom::data::PriceSeries series_from(const std::string& symbol, const std::vector<double>& closes,
                                             cpdmom::Date start = cpdmom::make_date(2015, 1, 5)) {
  cpdmom::data::PriceSeries p;
  p.symbol = symbol;
  cpdmom::Date d = start;
  for (double c : closes) {
    p.dates.push_back(d);
    p.closes.push_back(c);
    d = cpdmom::next_business_day(d);
  }
  return p;
}

inline cpdmom::data::ReturnSeries returns_from(const std::string& symbol, const std::vector<double>& values,
                                               cpdmom::Date start = cpdmom::make_date(2015, 1, 6)) {
  cpdmom::data::ReturnSeries r;
  r.symbol = symbol;
  cpdmom::Date d = start;
  for (double v : values) {
    r.dates.push_back(d);
    r.values.push_back(v);
    d = cpdmom::next_business_day(d);
  }
  return r;
}

inline std::vector<double> gaussian(std::size_t n, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(mean, sd);
  std::vector<double> out(n);
  for (double& v : out) v = z(rng);
  return out;
}

inline cpdmom::data::PriceSeries regime_asset(const std::string& symbol, int days, int regime, double drift, double vol,
                                              std::uint64_t seed) {
  cpdmom::data::RegimeSpec spec;
  spec.symbol = symbol;
  spec.seed = seed;
  spec.start_date = cpdmom::make_date(2010, 1, 4);
  double sign = 1.0;
  for (int left = days; left > 0; left -= regime) {
    spec.segments.push_back({std::min(regime, left), sign * drift, vol});
    sign = -sign;
  }
  return cpdmom::data::generate_synthetic(spec);
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cpdmom_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
