#include "cpdmom/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cpdmom/errors.hpp"
#include "cpdmom/backtest.hpp"
#include "cpdmom/strategies.hpp"

namespace cpdmom::app {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("bad number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean '" + v + "'");
}

template <class T>
std::vector<T> parse_numbers(const std::string& v) {
  std::vector<T> out;
  for (const auto& s : split_list(v)) out.push_back(parse_number<T>(s));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }, [](const RunConfig& c) { return c.out.string(); }},
      {"prices", [](RunConfig& c, const std::string& v) { c.prices = v; },
       [](const RunConfig& c) { return c.prices.string(); }},
      {"cpd_cache", [](RunConfig& c, const std::string& v) { c.cpd_cache = v; },
       [](const RunConfig& c) { return c.cpd_cache.string(); }},
      {"models", [](RunConfig& c, const std::string& v) { c.models = v; },
       [](const RunConfig& c) { return c.models.string(); }},
      {"lookbacks", [](RunConfig& c, const std::string& v) { c.lookbacks = parse_numbers<int>(v); },
       [](const RunConfig& c) { return join(c.lookbacks); }},
      {"allow_any_lookback", [](RunConfig& c, const std::string& v) { c.allow_any_lookback = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.allow_any_lookback ? "true" : "false"); }},
      {"sigma_target", [](RunConfig& c, const std::string& v) { c.sigma_target = parse_number<double>(v); },
       [](const RunConfig& c) { return fmt(c.sigma_target); }},
      {"vol_span", [](RunConfig& c, const std::string& v) { c.prep.vol_span = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.prep.vol_span); }},
      {"winsorize", [](RunConfig& c, const std::string& v) { c.prep.winsorize = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.prep.winsorize ? "true" : "false"); }},
      {"winsorize_halflife",
       [](RunConfig& c, const std::string& v) { c.prep.winsorize_halflife = parse_number<double>(v); },
       [](const RunConfig& c) { return fmt(c.prep.winsorize_halflife); }},
      {"winsorize_clip", [](RunConfig& c, const std::string& v) { c.prep.winsorize_clip = parse_number<double>(v); },
       [](const RunConfig& c) { return fmt(c.prep.winsorize_clip); }},
      {"window_start", [](RunConfig& c, const std::string& v) { c.window_start = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.window_start); }},
      {"window_end", [](RunConfig& c, const std::string& v) { c.window_end = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.window_end); }},
      {"window_step", [](RunConfig& c, const std::string& v) { c.window_step = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.window_step); }},
      {"initial_train", [](RunConfig& c, const std::string& v) { c.initial_train = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.initial_train); }},
      {"strategies", [](RunConfig& c, const std::string& v) { c.strategies = split_list(v); },
       [](const RunConfig& c) { return join(c.strategies); }},
      {"return_offsets",
       [](RunConfig& c, const std::string& v) { c.features.return_offsets = parse_numbers<int>(v); },
       [](const RunConfig& c) { return join(c.features.return_offsets); }},
      {"macd_pairs",
       [](RunConfig& c, const std::string& v) {
         c.features.macd.pairs.clear();
         for (const auto& p : split_list(v)) {
           const auto colon = p.find(':');
           if (colon == std::string::npos) throw ConfigError("MACD pair '" + p + "' must look like S:L");
           c.features.macd.pairs.emplace_back(parse_number<int>(trim(p.substr(0, colon))),
                                              parse_number<int>(trim(p.substr(colon + 1))));
         }
       },
       [](const RunConfig& c) {
         std::string out;
         for (const auto& [s, l] : c.features.macd.pairs) {
           if (!out.empty()) out += ',';
           out += std::to_string(s) + ":" + std::to_string(l);
         }
         return out;
       }},
      {"macd_price_std_window",
       [](RunConfig& c, const std::string& v) { c.features.macd.price_std_window = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.features.macd.price_std_window); }},
      {"macd_signal_std_window",
       [](RunConfig& c, const std::string& v) { c.features.macd.signal_std_window = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.features.macd.signal_std_window); }},
      {"sequence_length", [](RunConfig& c, const std::string& v) { c.train.sequence_length = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.train.sequence_length); }},
      {"max_epochs", [](RunConfig& c, const std::string& v) { c.train.max_epochs = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.train.max_epochs); }},
      {"patience", [](RunConfig& c, const std::string& v) { c.train.patience = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.train.patience); }},
      {"validation_fraction",
       [](RunConfig& c, const std::string& v) { c.train.validation_fraction = parse_number<double>(v); },
       [](const RunConfig& c) { return fmt(c.train.validation_fraction); }},
      {"search_iters", [](RunConfig& c, const std::string& v) { c.search_iters = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.search_iters); }},
      {"grid.dropout_rate", [](RunConfig& c, const std::string& v) { c.grid.dropout_rate = parse_numbers<double>(v); },
       [](const RunConfig& c) { return join(c.grid.dropout_rate); }},
      {"grid.hidden_size", [](RunConfig& c, const std::string& v) { c.grid.hidden_size = parse_numbers<int>(v); },
       [](const RunConfig& c) { return join(c.grid.hidden_size); }},
      {"grid.minibatch_size",
       [](RunConfig& c, const std::string& v) { c.grid.minibatch_size = parse_numbers<int>(v); },
       [](const RunConfig& c) { return join(c.grid.minibatch_size); }},
      {"grid.learning_rate",
       [](RunConfig& c, const std::string& v) { c.grid.learning_rate = parse_numbers<double>(v); },
       [](const RunConfig& c) { return join(c.grid.learning_rate); }},
      {"grid.max_grad_norm",
       [](RunConfig& c, const std::string& v) { c.grid.max_grad_norm = parse_numbers<double>(v); },
       [](const RunConfig& c) { return join(c.grid.max_grad_norm); }},
      {"grid.cpd_lookback", [](RunConfig& c, const std::string& v) { c.grid.cpd_lookback = parse_numbers<int>(v); },
       [](const RunConfig& c) { return join(c.grid.cpd_lookback); }},
      {"cost_bps", [](RunConfig& c, const std::string& v) { c.cost_bps = parse_numbers<double>(v); },
       [](const RunConfig& c) { return join(c.cost_bps); }},
      {"changepoint_threshold",
       [](RunConfig& c, const std::string& v) { c.changepoint_threshold = parse_number<double>(v); },
       [](const RunConfig& c) { return fmt(c.changepoint_threshold); }},
      {"changepoint_burn_in", [](RunConfig& c, const std::string& v) { c.changepoint_burn_in = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.changepoint_burn_in); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"workers", [](RunConfig& c, const std::string& v) { c.workers = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.workers); }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void validate(const RunConfig& c) {
  static const std::vector<int> standard_lookbacks = {10, 21, 63, 126, 252};
  auto check_lookbacks = [&](const std::vector<int>& v, const char* what, bool allow_zero) {
    for (int l : v) {
      if (allow_zero && l == 0) continue;
      if (l < 2) throw ConfigError(std::string(what) + ": lookback " + std::to_string(l) + " is below 2");
      if (!c.allow_any_lookback && std::find(standard_lookbacks.begin(), standard_lookbacks.end(), l) == standard_lookbacks.end()) {
        throw ConfigError(std::string(what) + ": lookback " + std::to_string(l) +
                          " is outside {10,21,63,126,252}; set allow_any_lookback = true to use it");
      }
    }
  };
  check_lookbacks(c.lookbacks, "lookbacks", false);
  check_lookbacks(c.grid.cpd_lookback, "grid.cpd_lookback", true);
  if (!(c.sigma_target > 0.0)) throw ConfigError("sigma_target must be positive");
  if (c.window_step < 1 || c.initial_train < 1) throw ConfigError("window_step and initial_train must be positive");
  if (c.window_end <= c.window_start) throw ConfigError("window_end must follow window_start");
  try {
    bt::plan_windows(c.window_start, c.window_end, c.window_step, c.initial_train);
  } catch (const InsufficientDataError& e) {
    throw ConfigError(std::string("window bounds: ") + e.what());
  }
  if (c.search_iters < 1) throw ConfigError("search_iters must be at least 1");
  if (c.train.max_epochs < 1 || c.train.patience < 1 || c.train.sequence_length < 1) {
    throw ConfigError("max_epochs, patience and sequence_length must be positive");
  }
  if (c.features.return_offsets.empty()) throw ConfigError("return_offsets is empty");
  for (int k : c.features.return_offsets) {
    if (k < 1) throw ConfigError("return offsets must be positive");
  }
  for (const auto& [s, l] : c.features.macd.pairs) {
    if (s < 1 || l <= s) throw ConfigError("MACD pairs need 0 < S < L");
  }
  for (double r : c.grid.dropout_rate) {
    if (r < 0.0 || r >= 1.0) throw ConfigError("grid.dropout_rate values must lie in [0, 1)");
  }
  for (int h : c.grid.hidden_size) {
    if (h < 1) throw ConfigError("grid.hidden_size values must be positive");
  }
  for (int m : c.grid.minibatch_size) {
    if (m < 1) throw ConfigError("grid.minibatch_size values must be positive");
  }
  for (double v : c.cost_bps) {
    if (v < 0.0) throw ConfigError("cost_bps values must be non-negative");
  }
  for (const auto& s : c.strategies) strat::parse_strategy(s);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace cpdmom::app
