#pragma once

// Rolling changepoint detection over a return series, and the CSV cache
// that carries its output to the feature builder.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cpdmom/data.hpp"
#include "cpdmom/gp.hpp"

namespace cpdmom::cpd {

enum class Fallback { none, reinit, carried_forward };

std::string to_string(Fallback f);
Fallback parse_fallback(const std::string& s);

struct CpdResult {
  std::string symbol;
  Date date{};
  int lookback = 0;
  double nu = 0.5;
  double gamma = 0.5;
  double nlml_matern = 0.0;       // NaN when carried forward
  double nlml_changepoint = 0.0;  // NaN when carried forward
  Fallback fallback = Fallback::none;
};

// Outcome of the two fits on the window ending at `end_index`.
struct DayFit {
  bool ok = false;
  bool reinit = false;
  double nu = 0.5, gamma = 0.5;
  double nlml_matern = 0.0, nlml_changepoint = 0.0;
};
DayFit fit_day(const data::ReturnSeries& returns, std::size_t end_index, int lookback,
               const gp::FitBounds& bounds = {});

// Result for a failed day given the previous day's result: same score, the
// location one step deeper into the window. Neutral (0.5, 0.5) without one.
CpdResult carry_forward(const std::optional<CpdResult>& previous, const std::string& symbol, Date date,
                        int lookback);

// One result per return date in [first, last] that has `lookback` days of
// history. `previous` seeds the carry-forward chain (e.g. from a cache).
// This is the day-by-day reference implementation.
std::vector<CpdResult> run_cpd(const data::ReturnSeries& returns, int lookback, Date first, Date last,
                               const std::optional<CpdResult>& previous = std::nullopt,
                               const gp::FitBounds& bounds = {});

struct CpdTask {
  const data::ReturnSeries* returns = nullptr;
  int lookback = 0;
  Date first{};
  Date last{};
  std::optional<CpdResult> previous;
};

// Every (task, day) fit runs as an independent OpenMP work item; the
// carry-forward chain is then resolved per task in date order. Output is
// identical to run_cpd_panel_serial for any worker count. workers <= 0 uses
// the OpenMP default.
std::vector<std::vector<CpdResult>> run_cpd_panel(const std::vector<CpdTask>& tasks, int workers = 0,
                                                  const gp::FitBounds& bounds = {});
std::vector<std::vector<CpdResult>> run_cpd_panel_serial(const std::vector<CpdTask>& tasks,
                                                         const gp::FitBounds& bounds = {});

// --- cache CSV -------------------------------------------------------------
// symbol,date,lookback,nu,gamma,nlml_matern,nlml_changepoint,fallback

inline constexpr const char* kCacheHeader = "symbol,date,lookback,nu,gamma,nlml_matern,nlml_changepoint,fallback";

std::vector<CpdResult> read_cache(const std::filesystem::path& path);
void write_cache(const std::filesystem::path& path, const std::vector<CpdResult>& rows);
void append_cache(const std::filesystem::path& path, const std::vector<CpdResult>& rows);

// Lookup of cached results by (symbol, lookback, date).
class CpdIndex {
 public:
  CpdIndex() = default;
  explicit CpdIndex(const std::vector<CpdResult>& rows);

  void add(const CpdResult& r);
  const CpdResult* find(const std::string& symbol, int lookback, Date date) const;
  // Latest cached result for the series, if any.
  const CpdResult* last(const std::string& symbol, int lookback) const;
  std::size_t size() const { return count_; }

 private:
  std::map<std::pair<std::string, int>, std::map<Date, CpdResult>> rows_;
  std::size_t count_ = 0;
};

}  // namespace cpdmom::cpd
