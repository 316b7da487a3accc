#include "cpdmom/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cpdmom/cpd.hpp"
#include "cpdmom/errors.hpp"
#include "cpdmom/features.hpp"
#include "cpdmom/train.hpp"

namespace cpdmom::app {

namespace fs = std::filesystem;
using nlohmann::json;

// --- logging ---------------------------------------------------------------

namespace {

std::mutex log_mutex;
std::ofstream log_file;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

void set_log_file(const fs::path& path) {
  std::lock_guard lock(log_mutex);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  log_file = std::ofstream(path, std::ios::app);
}

void log(const std::string& level, const std::string& stage, const std::string& message) {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const auto day = std::chrono::floor<std::chrono::days>(now);
  const std::chrono::hh_mm_ss hms(now - day);
  char ts[32];
  std::snprintf(ts, sizeof ts, "%sT%02d:%02d:%02dZ", format_date(day).c_str(), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
  const std::string line =
      std::string("ts=") + ts + " level=" + level + " stage=" + stage + " msg=" + quote(message) + "\n";
  std::lock_guard lock(log_mutex);
  std::cerr << line;
  if (log_file) log_file << line << std::flush;
}

// --- gen-data ----------------------------------------------------------------

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Date get_date(const json& j, const char* key, Date fallback) {
  return j.contains(key) ? parse_date(j.at(key).get<std::string>()) : fallback;
}

}  // namespace

std::vector<data::PriceSeries> synthetic_from_json(const std::string& text, std::optional<std::uint64_t> seed) {
  json spec;
  try {
    spec = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  if (!spec.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  std::vector<data::PriceSeries> out;
  try {
    const std::uint64_t base_seed = seed.value_or(get_or<std::uint64_t>(spec, "seed", 0));
    const Date start = get_date(spec, "start_date", make_date(2010, 1, 4));
    std::vector<data::RegimeSpec> regimes;
    if (spec.contains("universe")) {
      const json& u = spec.at("universe");
      data::UniverseSpec us;
      us.n_assets = get_or(u, "n_assets", us.n_assets);
      us.n_days = get_or(u, "n_days", us.n_days);
      us.regime_length = get_or(u, "regime_length", us.regime_length);
      us.drift = get_or(u, "drift", us.drift);
      us.base_vol = get_or(u, "base_vol", us.base_vol);
      us.vol_spread = get_or(u, "vol_spread", us.vol_spread);
      us.seed = base_seed;
      us.start_date = get_date(u, "start_date", start);
      regimes = data::make_regime_universe(us);
    } else if (spec.contains("assets")) {
      std::uint64_t k = 0;
      for (const json& a : spec.at("assets")) {
        data::RegimeSpec rs;
        rs.symbol = a.at("symbol").get<std::string>();
        rs.seed = get_or<std::uint64_t>(a, "seed", base_seed + k++);
        rs.start_price = get_or(a, "start_price", rs.start_price);
        rs.start_date = get_date(a, "start_date", start);
        for (const json& s : a.at("segments")) {
          rs.segments.push_back({s.at("length").get<int>(), get_or(s, "drift", 0.0), s.at("vol").get<double>()});
        }
        regimes.push_back(std::move(rs));
      }
    } else {
      throw ConfigError("synthetic spec needs an \"assets\" list or a \"universe\" block");
    }
    if (regimes.empty()) throw ConfigError("synthetic spec defines no assets");
    std::set<std::string> names;
    for (const auto& r : regimes) {
      if (!names.insert(r.symbol).second) throw ConfigError("duplicate symbol '" + r.symbol + "' in synthetic spec");
      out.push_back(data::generate_synthetic(r));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return out;
}

void cmd_gen_data(const fs::path& spec, const fs::path& out_csv, std::optional<std::uint64_t> seed) {
  std::ifstream in(spec);
  if (!in) throw ConfigError("cannot open synthetic spec " + spec.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto series = synthetic_from_json(ss.str(), seed);
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  data::write_prices(out_csv, series);
  std::size_t rows = 0;
  for (const auto& s : series) rows += s.size();
  log("info", "gen-data", "wrote " + std::to_string(series.size()) + " series, " + std::to_string(rows) + " rows to " +
                              out_csv.string());
}

std::vector<data::AssetFrame> load_frames(const RunConfig& cfg) {
  const fs::path path = cfg.prices_path();
  if (!fs::exists(path)) throw ConfigError("price file " + path.string() + " not found (run gen-data or set prices)");
  const auto series = data::load_prices(path);
  std::vector<data::AssetFrame> frames;
  for (const auto& [sym, s] : series) frames.push_back(data::prepare_asset(s, cfg.prep));
  return frames;
}

// --- cpd ---------------------------------------------------------------------

namespace {

std::string cpd_meta(const RunConfig& cfg) {
  std::ostringstream m;
  m << "winsorize = " << (cfg.prep.winsorize ? "true" : "false") << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", cfg.prep.winsorize_halflife);
  m << "winsorize_halflife = " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", cfg.prep.winsorize_clip);
  m << "winsorize_clip = " << buf << '\n';
  m << "prices = " << fs::absolute(cfg.prices_path()).lexically_normal().string() << '\n';
  return m.str();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

cpd::CpdIndex load_cpd_index(const RunConfig& cfg) {
  const fs::path path = cfg.cpd_cache_path();
  if (!fs::exists(path)) {
    throw ConfigError("CPD cache " + path.string() + " not found; run the `cpd` command first");
  }
  return cpd::CpdIndex(cpd::read_cache(path));
}

}  // namespace

CpdSummary cmd_cpd(const RunConfig& cfg) {
  validate(cfg);
  const auto frames = load_frames(cfg);
  const fs::path cache = cfg.cpd_cache_path();
  const fs::path meta = fs::path(cache.string() + ".meta");
  const std::string want = cpd_meta(cfg);
  if (cache.has_parent_path()) fs::create_directories(cache.parent_path());

  cpd::CpdIndex index;
  if (fs::exists(cache)) {
    if (!fs::exists(meta)) {
      throw ConfigError("CPD cache " + cache.string() + " has no " + meta.filename().string() +
                        " sidecar; cannot tell which data options produced it. Remove it or point cpd_cache elsewhere");
    }
    const std::string have = read_text(meta);
    if (have != want) {
      throw ConfigError("CPD cache " + cache.string() + " was built with different settings:\n--- cache\n" + have +
                        "--- config\n" + want + "Remove the cache or point cpd_cache elsewhere");
    }
    index = cpd::CpdIndex(cpd::read_cache(cache));
  } else {
    std::ofstream(meta) << want;
  }

  std::vector<data::ReturnSeries> returns;
  for (const auto& f : frames) returns.push_back(f.return_series());
  std::vector<cpd::CpdTask> tasks;
  for (const auto& r : returns) {
    if (r.size() == 0) continue;
    for (int l : cfg.lookbacks) {
      cpd::CpdTask t;
      t.returns = &r;
      t.lookback = l;
      t.first = r.dates.front();
      t.last = r.dates.back();
      if (const auto* last = index.last(r.symbol, l)) {
        t.first = last->date + std::chrono::days(1);
        t.previous = *last;
      }
      if (t.first <= t.last) tasks.push_back(t);
    }
  }
  log("info", "cpd", std::to_string(tasks.size()) + " (asset, lookback) series to extend");
  const auto results = cpd::run_cpd_panel(tasks, cfg.workers);
  CpdSummary s;
  std::vector<cpd::CpdResult> rows;
  for (const auto& series : results) {
    for (const auto& r : series) {
      if (r.fallback == cpd::Fallback::carried_forward) ++s.carried_forward;
      rows.push_back(r);
    }
  }
  cpd::append_cache(cache, rows);
  s.added = rows.size();
  s.total = index.size() + rows.size();
  log("info", "cpd",
      "added " + std::to_string(s.added) + " rows (" + std::to_string(s.carried_forward) + " carried forward), " +
          std::to_string(s.total) + " in " + cache.string());
  return s;
}

// --- train -------------------------------------------------------------------

std::string model_tag(const strat::StrategySpec& spec) {
  if (spec.kind == strat::StrategyKind::lstm) return "lstm";
  if (spec.kind == strat::StrategyKind::lstm_cpd) {
    return spec.cpd_lookback > 0 ? "lstm_cpd_lbw" + std::to_string(spec.cpd_lookback) : "lstm_cpd_opt";
  }
  throw ValidationError("strategy '" + spec.name() + "' has no model");
}

std::string file_stem(const std::string& strategy) {
  std::string out;
  for (char c : strategy) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return out;
}

std::vector<std::string> eligible_assets(const std::vector<dmn::AssetFeatures>& base, const bt::Window& w,
                                         const dmn::TrainOptions& options) {
  return dmn::make_dataset(base, w.train_start, w.train_end, options).assets;
}

namespace {

class FeatureStore {
 public:
  FeatureStore(const std::vector<data::AssetFrame>& frames, const RunConfig& cfg, const cpd::CpdIndex* cpd)
      : frames_(frames), cfg_(cfg), cpd_(cpd) {}

  dmn::FeatureConfig config(int lookback) const {
    dmn::FeatureConfig fc = cfg_.features;
    fc.cpd_lookback = lookback;
    return fc;
  }

  const std::vector<dmn::AssetFeatures>& get(int lookback) {
    auto it = cache_.find(lookback);
    if (it != cache_.end()) return it->second;
    if (lookback > 0 && !cpd_) throw ConfigError("changepoint features need the CPD cache; run the `cpd` command first");
    std::vector<dmn::AssetFeatures> out;
    for (const auto& f : frames_) out.push_back(dmn::build_features(f, config(lookback), cpd_, cfg_.sigma_target));
    return cache_.emplace(lookback, std::move(out)).first->second;
  }

 private:
  const std::vector<data::AssetFrame>& frames_;
  const RunConfig& cfg_;
  const cpd::CpdIndex* cpd_;
  std::map<int, std::vector<dmn::AssetFeatures>> cache_;
};

std::vector<strat::StrategySpec> parse_strategies(const RunConfig& cfg) {
  if (cfg.strategies.empty()) throw ConfigError("no strategies configured (set strategies = ...)");
  std::vector<strat::StrategySpec> out;
  for (const auto& s : cfg.strategies) out.push_back(strat::parse_strategy(s));
  return out;
}

bool needs_cpd(const std::vector<strat::StrategySpec>& specs) {
  return std::any_of(specs.begin(), specs.end(),
                     [](const auto& s) { return s.kind == strat::StrategyKind::lstm_cpd; });
}

std::vector<bt::Window> windows_of(const RunConfig& cfg) {
  return bt::plan_windows(cfg.window_start, cfg.window_end, cfg.window_step, cfg.initial_train);
}

fs::path checkpoint_path(const RunConfig& cfg, const strat::StrategySpec& spec, std::size_t window) {
  return cfg.models_path() / model_tag(spec) / ("window_" + std::to_string(window) + ".ckpt");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

TrainSummary cmd_train(const RunConfig& cfg, bool resume) {
  validate(cfg);
  const auto specs = parse_strategies(cfg);
  TrainSummary summary;
  std::vector<strat::StrategySpec> learned;
  for (const auto& s : specs) {
    if (s.learned()) learned.push_back(s);
  }
  if (learned.empty()) {
    log("info", "train", "no learned strategies configured; nothing to train");
    return summary;
  }
  const auto frames = load_frames(cfg);
  std::optional<cpd::CpdIndex> cpd;
  if (needs_cpd(learned)) cpd = load_cpd_index(cfg);
  FeatureStore store(frames, cfg, cpd ? &*cpd : nullptr);
  const auto windows = windows_of(cfg);

  for (const auto& spec : learned) {
    const fs::path dir = cfg.models_path() / model_tag(spec);
    fs::create_directories(dir);
    const fs::path log_path = dir / "search_log.csv";
    if (!resume || !fs::exists(log_path)) {
      std::ofstream(log_path) << "window,trial,seed,dropout_rate,hidden_size,minibatch_size,learning_rate,"
                                 "max_grad_norm,cpd_lookback,validation_loss,epochs,best,error\n";
    }
    dmn::SearchGrid grid = cfg.grid;
    if (spec.kind == strat::StrategyKind::lstm) {
      grid.cpd_lookback = {0};
    } else if (spec.cpd_lookback > 0) {
      grid.cpd_lookback = {spec.cpd_lookback};
    }

    for (std::size_t i = 0; i < windows.size(); ++i) {
      const auto& w = windows[i];
      const fs::path ckpt = checkpoint_path(cfg, spec, i);
      if (resume && fs::exists(ckpt)) {
        log("info", "train", spec.name() + " window " + std::to_string(i) + ": checkpoint exists, skipped");
        ++summary.skipped;
        continue;
      }
      const auto assets = eligible_assets(store.get(0), w, cfg.train);
      if (assets.empty()) {
        throw InsufficientDataError("window " + std::to_string(i) + " (train to " + format_date(w.train_end) +
                                    ") has no asset with a full validation sequence");
      }
      std::map<int, dmn::Dataset> datasets;
      auto dataset = [&](int lookback) -> const dmn::Dataset& {
        auto it = datasets.find(lookback);
        if (it == datasets.end()) {
          it = datasets.emplace(lookback, dmn::make_dataset(store.get(lookback), w.train_start, w.train_end, cfg.train))
                   .first;
        }
        return it->second;
      };
      const dmn::TrainFn fn = [&](const dmn::LstmHyperparams& h, std::uint64_t seed) {
        dmn::TrainOptions opts = cfg.train;
        opts.workers = cfg.workers;
        return dmn::train(dataset(h.cpd_lookback), h, store.config(h.cpd_lookback), seed, opts);
      };
      const std::uint64_t seed = cfg.seed + 1000003ULL * (i + 1);
      const auto result = dmn::random_search(grid, cfg.search_iters, fn, seed);
      dmn::save_model(ckpt, result.best.model);

      std::ofstream lg(log_path, std::ios::app);
      for (const auto& t : result.trials) {
        lg << i << ',' << t.index << ',' << t.seed << ',' << num(t.hyper.dropout_rate) << ',' << t.hyper.hidden_size
           << ',' << t.hyper.minibatch_size << ',' << num(t.hyper.learning_rate) << ',' << num(t.hyper.max_grad_norm)
           << ',' << t.hyper.cpd_lookback << ',' << num(t.validation_loss) << ',' << t.epochs_run << ','
           << (t.index == result.best_index ? 1 : 0) << ',' << quote(t.error) << '\n';
      }
      ++summary.trained;
      log("info", "train",
          spec.name() + " window " + std::to_string(i) + ": best trial " + std::to_string(result.best_index) +
              " validation loss " + num(result.best.validation_loss) + " -> " + ckpt.string());
    }
  }
  return summary;
}

// --- result files --------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
  return f;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
  return out;
}

void write_metrics(std::ostream& out, const bt::MetricsRow& m) {
  out << num(m.returns_ann) << ',' << num(m.vol_ann) << ',' << num(m.sharpe) << ',' << num(m.downside_dev_ann) << ','
      << num(m.sortino) << ',' << num(m.mdd) << ',' << num(m.calmar) << ',' << num(m.pct_positive) << ','
      << num(m.avg_p_over_avg_l);
}

bt::MetricsRow metrics_or_nan(const std::vector<double>& r) {
  if (r.size() < 2) {
    const double nan = std::nan("");
    return {nan, nan, nan, nan, nan, nan, nan, nan, nan};
  }
  return bt::compute_metrics(r, false);
}

int group_rank(const std::string& g) {
  static const std::vector<std::string> order = {"Reference", "TSMOM", "LSTM", "LSTM w/ CPD"};
  return static_cast<int>(std::find(order.begin(), order.end(), g) - order.begin());
}

std::vector<std::size_t> report_order(const std::vector<bt::StrategyReturns>& results) {
  std::vector<std::size_t> idx(results.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return group_rank(results[a].group) < group_rank(results[b].group);
  });
  return idx;
}

void write_reports(const RunConfig& cfg, const std::vector<bt::StrategyReturns>& results) {
  const auto order = report_order(results);
  for (const bool rescaled : {false, true}) {
    auto out = open_out(cfg.out / (rescaled ? "report_rescaled.csv" : "report_raw.csv"));
    out << "group,strategy," << bt::kMetricsHeader << '\n';
    for (std::size_t i : order) {
      const auto& r = results[i];
      std::vector<double> series = r.portfolio;
      if (rescaled && series.size() >= 2) {
        try {
          series = bt::rescale_to_target_vol(series, cfg.sigma_target);
        } catch (const UndefinedMetricError&) {
        }
      }
      out << r.group << ',' << r.strategy << ',';
      write_metrics(out, metrics_or_nan(series));
      out << '\n';
    }
  }

  std::printf("%-12s %-22s %9s %8s %7s %9s %8s %7s %7s %6s %7s\n", "group", "strategy", "E[R]", "vol", "Sharpe",
              "down.dev", "Sortino", "MDD", "Calmar", "%+ve", "P/L");
  for (std::size_t i : order) {
    const auto& r = results[i];
    const auto m = metrics_or_nan(r.portfolio);
    std::printf("%-12s %-22s %9.4f %8.4f %7.3f %9.4f %8.3f %7.4f %7.3f %6.1f %7.3f\n", r.group.c_str(),
                r.strategy.c_str(), m.returns_ann, m.vol_ann, m.sharpe, m.downside_dev_ann, m.sortino, m.mdd, m.calmar,
                m.pct_positive, m.avg_p_over_avg_l);
  }
}

void write_cost_curves(const RunConfig& cfg, const std::vector<bt::StrategyReturns>& results) {
  for (const auto& r : results) {
    auto out = open_out(cfg.out / "costs" / (file_stem(r.strategy) + ".csv"));
    out << "C_bps,sharpe\n";
    if (r.portfolio.size() < 2) continue;
    for (const auto& p : bt::cost_sweep(r, cfg.sigma_target, cfg.cost_bps)) out << num(p.c_bps) << ',' << num(p.sharpe) << '\n';
  }
}

void write_portfolio_returns(const fs::path& path, const bt::StrategyReturns& r) {
  auto out = open_out(path);
  out << "date,return\n";
  for (std::size_t i = 0; i < r.dates.size(); ++i) out << format_date(r.dates[i]) << ',' << fmt17(r.portfolio[i]) << '\n';
}

std::vector<std::pair<Date, double>> read_portfolio_returns(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string() + "; run the `backtest` command first");
  std::string line;
  std::getline(in, line);
  if (line != "date,return") throw ParseError(path.string() + ":1: expected header 'date,return'");
  std::vector<std::pair<Date, double>> out;
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2) throw ParseError(path.string() + ":" + std::to_string(no) + ": expected 2 fields");
    try {
      out.emplace_back(parse_date(f[0]), std::stod(f[1]));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

void write_plot_data(const RunConfig& cfg, const bt::StrategyReturns& r) {
  const std::string stem = file_stem(r.strategy);
  {
    auto out = open_out(cfg.out / "plots" / ("equity_" + stem + ".csv"));
    out << "date,equity\n";
    double e = 1.0;
    for (std::size_t i = 0; i < r.dates.size(); ++i) {
      e *= 1.0 + r.portfolio[i];
      out << format_date(r.dates[i]) << ',' << num(e) << '\n';
    }
  }
  auto out = open_out(cfg.out / "plots" / ("position_ma_" + stem + ".csv"));
  out << "symbol,date,position,ma_252,ma_21\n";
  for (const auto& [sym, tr] : r.assets) {
    const auto ma = bt::position_diagnostics(tr.positions);
    for (std::size_t i = 0; i < tr.positions.size(); ++i) {
      out << sym << ',' << format_date(tr.position_dates[i]) << ',' << num(tr.positions[i]) << ',' << num(ma.slow[i])
          << ',' << num(ma.fast[i]) << '\n';
    }
  }
}

void write_changepoints(const RunConfig& cfg, const cpd::CpdIndex& index, const std::vector<data::AssetFrame>& frames) {
  for (int l : cfg.lookbacks) {
    auto out = open_out(cfg.out / "plots" / ("changepoints_lbw" + std::to_string(l) + ".csv"));
    out << "symbol,date,nu,gamma,changepoint\n";
    for (const auto& f : frames) {
      std::vector<const cpd::CpdResult*> rows;
      for (Date d : f.dates) {
        if (const auto* r = index.find(f.symbol, l, d)) rows.push_back(r);
      }
      std::vector<double> nu;
      for (const auto* r : rows) nu.push_back(r->nu);
      const auto flags = bt::classify_changepoints(nu, cfg.changepoint_threshold, cfg.changepoint_burn_in);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        out << f.symbol << ',' << format_date(rows[i]->date) << ',' << num(rows[i]->nu) << ',' << num(rows[i]->gamma)
            << ',' << (flags[i] ? 1 : 0) << '\n';
      }
    }
  }
}

}  // namespace

void write_asset_returns(const fs::path& path, const bt::StrategyReturns& r) {
  auto out = open_out(path);
  out << "symbol,position_date,return_date,position,sigma,captured\n";
  for (const auto& [sym, tr] : r.assets) {
    for (std::size_t i = 0; i < tr.captured.size(); ++i) {
      out << sym << ',' << format_date(tr.position_dates[i]) << ',' << format_date(tr.return_dates[i]) << ','
          << fmt17(tr.positions[i]) << ',' << fmt17(tr.sigma[i]) << ',' << fmt17(tr.captured[i]) << '\n';
    }
  }
}

bt::StrategyReturns read_asset_returns(const fs::path& path, const strat::StrategySpec& spec) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string() + "; run the `backtest` command first");
  std::string line;
  std::getline(in, line);
  if (line != "symbol,position_date,return_date,position,sigma,captured") {
    throw ParseError(path.string() + ":1: unexpected header");
  }
  bt::StrategyReturns r;
  r.strategy = spec.name();
  r.group = spec.group();
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw ParseError(path.string() + ":" + std::to_string(no) + ": expected 6 fields");
    try {
      auto& tr = r.assets[f[0]];
      tr.position_dates.push_back(parse_date(f[1]));
      tr.return_dates.push_back(parse_date(f[2]));
      tr.positions.push_back(std::stod(f[3]));
      tr.sigma.push_back(std::stod(f[4]));
      tr.captured.push_back(std::stod(f[5]));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  r.rebuild_portfolio();
  return r;
}

// --- backtest / cost-sweep / report ------------------------------------------------

void cmd_backtest(const RunConfig& cfg) {
  validate(cfg);
  const auto specs = parse_strategies(cfg);
  const auto frames = load_frames(cfg);
  std::optional<cpd::CpdIndex> cpd;
  if (needs_cpd(specs)) cpd = load_cpd_index(cfg);
  FeatureStore store(frames, cfg, cpd ? &*cpd : nullptr);
  const auto windows = windows_of(cfg);

  std::vector<std::vector<std::string>> eligible;
  for (const auto& w : windows) eligible.push_back(eligible_assets(store.get(0), w, cfg.train));

  auto per_window = open_out(cfg.out / "per_window.csv");
  per_window << "window,test_start,test_end,group,strategy,assets,days," << bt::kMetricsHeader << '\n';

  std::vector<bt::StrategyReturns> pooled;
  for (const auto& spec : specs) {
    std::vector<bt::StrategyReturns> parts;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      if (eligible[i].empty()) {
        log("warn", "backtest", "window " + std::to_string(i) + " has no eligible assets; skipped");
        continue;
      }
      std::optional<dmn::LstmModel> model;
      if (spec.learned()) {
        const fs::path ckpt = checkpoint_path(cfg, spec, i);
        if (!fs::exists(ckpt)) {
          throw ConfigError("checkpoint " + ckpt.string() + " not found; run the `train` command first");
        }
        model = dmn::load_model(ckpt);
      }
      bt::RunInputs in;
      in.frames = &frames;
      in.assets = eligible[i];
      in.model = model ? &*model : nullptr;
      in.cpd = cpd ? &*cpd : nullptr;
      in.sigma_target = cfg.sigma_target;
      in.macd = cfg.features.macd;
      in.sequence_length = cfg.train.sequence_length;
      in.workers = cfg.workers;
      auto r = bt::run_strategy(spec, in, windows[i]);
      per_window << i << ',' << format_date(windows[i].test_start) << ',' << format_date(windows[i].test_end) << ','
                 << r.group << ',' << r.strategy << ',' << r.assets.size() << ',' << r.portfolio.size() << ',';
      write_metrics(per_window, metrics_or_nan(r.portfolio));
      per_window << '\n';
      parts.push_back(std::move(r));
    }
    auto all = bt::concatenate(parts);
    all.strategy = spec.name();
    all.group = spec.group();
    const std::string stem = file_stem(all.strategy);
    write_asset_returns(cfg.out / "returns" / (stem + "_assets.csv"), all);
    write_portfolio_returns(cfg.out / "returns" / (stem + "_portfolio.csv"), all);
    write_plot_data(cfg, all);
    log("info", "backtest", all.strategy + ": " + std::to_string(all.portfolio.size()) + " portfolio days");
    pooled.push_back(std::move(all));
  }
  if (cpd) write_changepoints(cfg, *cpd, frames);
  write_cost_curves(cfg, pooled);
  write_reports(cfg, pooled);
}

void cmd_cost_sweep(const RunConfig& cfg) {
  validate(cfg);
  std::vector<bt::StrategyReturns> results;
  for (const auto& spec : parse_strategies(cfg)) {
    results.push_back(read_asset_returns(cfg.out / "returns" / (file_stem(spec.name()) + "_assets.csv"), spec));
  }
  write_cost_curves(cfg, results);
  for (const auto& r : results) {
    std::string line = r.strategy + ":";
    if (r.portfolio.size() >= 2) {
      for (const auto& p : bt::cost_sweep(r, cfg.sigma_target, cfg.cost_bps)) {
        line += " " + num(p.c_bps) + "bps=" + num(p.sharpe);
      }
    }
    std::printf("%s\n", line.c_str());
  }
}

void cmd_report(const RunConfig& cfg) {
  validate(cfg);
  std::vector<bt::StrategyReturns> results;
  for (const auto& spec : parse_strategies(cfg)) {
    bt::StrategyReturns r;
    r.strategy = spec.name();
    r.group = spec.group();
    for (const auto& [d, v] : read_portfolio_returns(cfg.out / "returns" / (file_stem(spec.name()) + "_portfolio.csv"))) {
      r.dates.push_back(d);
      r.portfolio.push_back(v);
    }
    results.push_back(std::move(r));
  }
  write_reports(cfg, results);
}

}  // namespace cpdmom::app
