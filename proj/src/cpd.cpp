#include "cpdmom/cpd.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cpdmom/errors.hpp"

namespace cpdmom::cpd {

std::string to_string(Fallback f) {
  switch (f) {
    case Fallback::none:
      return "none";
    case Fallback::reinit:
      return "reinit";
    case Fallback::carried_forward:
      return "carried_forward";
  }
  return "none";
}

Fallback parse_fallback(const std::string& s) {
  if (s == "none") return Fallback::none;
  if (s == "reinit") return Fallback::reinit;
  if (s == "carried_forward") return Fallback::carried_forward;
  throw ParseError("unknown fallback '" + s + "'");
}

DayFit fit_day(const data::ReturnSeries& returns, std::size_t end_index, int lookback, const gp::FitBounds& bounds) {
  DayFit out;
  try {
    const auto window = data::standardize_window(returns, end_index, lookback);
    const auto matern = gp::fit_matern(window, bounds);
    const auto cp = gp::fit_changepoint(window, matern, bounds);
    // Offsets: the window spans 0..lookback, so t = lookback.
    const auto sl = gp::cpd_score_location(matern.nlml, cp.nlml, cp.changepoint.c, lookback, lookback);
    out.ok = true;
    out.reinit = cp.reinitialized;
    out.nu = sl.nu;
    out.gamma = sl.gamma;
    out.nlml_matern = matern.nlml;
    out.nlml_changepoint = cp.nlml;
  } catch (const DegenerateWindowError&) {
  } catch (const FitFailureError&) {
  } catch (const NonPsdError&) {
  }
  return out;
}

CpdResult carry_forward(const std::optional<CpdResult>& previous, const std::string& symbol, Date date,
                        int lookback) {
  CpdResult r;
  r.symbol = symbol;
  r.date = date;
  r.lookback = lookback;
  r.fallback = Fallback::carried_forward;
  r.nlml_matern = std::nan("");
  r.nlml_changepoint = std::nan("");
  if (previous) {
    r.nu = previous->nu;
    r.gamma = std::max(0.0, previous->gamma - 1.0 / lookback);
  } else {
    r.nu = 0.5;
    r.gamma = 0.5;
  }
  return r;
}

namespace {

// Indices of return dates in [first, last] with a full window behind them.
std::pair<std::size_t, std::size_t> day_range(const data::ReturnSeries& r, int lookback, Date first, Date last) {
  const auto lo_it = std::lower_bound(r.dates.begin(), r.dates.end(), first);
  const auto hi_it = std::upper_bound(r.dates.begin(), r.dates.end(), last);
  std::size_t lo = static_cast<std::size_t>(lo_it - r.dates.begin());
  const std::size_t hi = static_cast<std::size_t>(hi_it - r.dates.begin());
  lo = std::max(lo, static_cast<std::size_t>(lookback));
  return {lo, std::max(lo, hi)};
}

CpdResult from_fit(const DayFit& f, const std::string& symbol, Date date, int lookback) {
  CpdResult r;
  r.symbol = symbol;
  r.date = date;
  r.lookback = lookback;
  r.nu = f.nu;
  r.gamma = f.gamma;
  r.nlml_matern = f.nlml_matern;
  r.nlml_changepoint = f.nlml_changepoint;
  r.fallback = f.reinit ? Fallback::reinit : Fallback::none;
  return r;
}

void validate_task(const CpdTask& t) {
  if (!t.returns) throw ValidationError("cpd task without returns");
  if (t.lookback < 2) throw ValidationError("cpd lookback must be >= 2");
}

}  // namespace

std::vector<CpdResult> run_cpd(const data::ReturnSeries& returns, int lookback, Date first, Date last,
                               const std::optional<CpdResult>& previous, const gp::FitBounds& bounds) {
  if (lookback < 2) throw ValidationError("cpd lookback must be >= 2");
  const auto [lo, hi] = day_range(returns, lookback, first, last);
  std::vector<CpdResult> out;
  out.reserve(hi - lo);
  std::optional<CpdResult> prev = previous;
  for (std::size_t i = lo; i < hi; ++i) {
    const DayFit f = fit_day(returns, i, lookback, bounds);
    CpdResult r = f.ok ? from_fit(f, returns.symbol, returns.dates[i], lookback)
                       : carry_forward(prev, returns.symbol, returns.dates[i], lookback);
    prev = r;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<CpdResult>> run_cpd_panel_serial(const std::vector<CpdTask>& tasks,
                                                         const gp::FitBounds& bounds) {
  std::vector<std::vector<CpdResult>> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) {
    validate_task(t);
    out.push_back(run_cpd(*t.returns, t.lookback, t.first, t.last, t.previous, bounds));
  }
  return out;
}

std::vector<std::vector<CpdResult>> run_cpd_panel(const std::vector<CpdTask>& tasks, int workers,
                                                  const gp::FitBounds& bounds) {
  struct Item {
    std::size_t task;
    std::size_t index;
  };
  std::vector<Item> items;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    validate_task(tasks[k]);
    const auto range = day_range(*tasks[k].returns, tasks[k].lookback, tasks[k].first, tasks[k].last);
    ranges.push_back(range);
    for (std::size_t i = range.first; i < range.second; ++i) items.push_back({k, i});
  }

  std::vector<DayFit> fits(items.size());
  const int threads = workers > 0 ? workers : omp_get_max_threads();
  const auto n = static_cast<std::ptrdiff_t>(items.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    const auto& it = items[static_cast<std::size_t>(j)];
    fits[static_cast<std::size_t>(j)] = fit_day(*tasks[it.task].returns, it.index, tasks[it.task].lookback, bounds);
  }

  std::vector<std::vector<CpdResult>> out(tasks.size());
  std::size_t j = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& r = *tasks[k].returns;
    std::optional<CpdResult> prev = tasks[k].previous;
    for (std::size_t i = ranges[k].first; i < ranges[k].second; ++i, ++j) {
      CpdResult res = fits[j].ok ? from_fit(fits[j], r.symbol, r.dates[i], tasks[k].lookback)
                                 : carry_forward(prev, r.symbol, r.dates[i], tasks[k].lookback);
      prev = res;
      out[k].push_back(std::move(res));
    }
  }
  return out;
}

// --- cache -------------------------------------------------------------------

namespace {

void write_rows(std::ostream& out, const std::vector<CpdResult>& rows) {
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,", r.lookback, r.nu, r.gamma, r.nlml_matern,
                  r.nlml_changepoint);
    out << r.symbol << ',' << format_date(r.date) << ',' << buf << to_string(r.fallback) << '\n';
  }
}

double field_double(const std::string& s, const std::string& where) {
  if (s == "nan" || s == "-nan" || s == "NaN") return std::nan("");
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<CpdResult> read_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cpd cache " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCacheHeader) {
    throw ParseError(path.string() + ":1: expected header '" + std::string(kCacheHeader) + "'");
  }
  std::vector<CpdResult> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      f.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() != 8) throw ParseError(where + ": expected 8 fields");
    CpdResult r;
    r.symbol = f[0];
    try {
      r.date = parse_date(f[1]);
      r.fallback = parse_fallback(f[7]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    r.lookback = static_cast<int>(field_double(f[2], where));
    r.nu = field_double(f[3], where);
    r.gamma = field_double(f[4], where);
    r.nlml_matern = field_double(f[5], where);
    r.nlml_changepoint = field_double(f[6], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_cache(const std::filesystem::path& path, const std::vector<CpdResult>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << kCacheHeader << '\n';
  write_rows(out, rows);
}

void append_cache(const std::filesystem::path& path, const std::vector<CpdResult>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw ValidationError("cannot write " + path.string());
  if (fresh) out << kCacheHeader << '\n';
  write_rows(out, rows);
}

CpdIndex::CpdIndex(const std::vector<CpdResult>& rows) {
  for (const auto& r : rows) add(r);
}

void CpdIndex::add(const CpdResult& r) {
  auto& series = rows_[{r.symbol, r.lookback}];
  if (series.insert_or_assign(r.date, r).second) ++count_;
}

const CpdResult* CpdIndex::find(const std::string& symbol, int lookback, Date date) const {
  const auto s = rows_.find({symbol, lookback});
  if (s == rows_.end()) return nullptr;
  const auto it = s->second.find(date);
  return it == s->second.end() ? nullptr : &it->second;
}

const CpdResult* CpdIndex::last(const std::string& symbol, int lookback) const {
  const auto s = rows_.find({symbol, lookback});
  if (s == rows_.end() || s->second.empty()) return nullptr;
  return &s->second.rbegin()->second;
}

}  // namespace cpdmom::cpd
