// OpenMP kernels against their serial references.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "cpdmom/backtest.hpp"
#include "cpdmom/cpd.hpp"
#include "cpdmom/lstm.hpp"

using namespace cpdmom;

namespace {

std::vector<data::AssetFrame> frames(int n_assets, int n_days) {
  data::UniverseSpec u;
  u.n_assets = n_assets;
  u.n_days = n_days;
  std::vector<data::AssetFrame> out;
  for (const auto& s : data::make_regime_universe(u)) out.push_back(data::prepare_asset(data::generate_synthetic(s)));
  return out;
}

const std::vector<data::AssetFrame>& panel() {
  static const auto f = frames(4, 160);
  return f;
}

std::vector<data::ReturnSeries> returns() {
  std::vector<data::ReturnSeries> out;
  for (const auto& f : panel()) out.push_back(f.return_series());
  return out;
}

std::vector<cpd::CpdTask> cpd_tasks(const std::vector<data::ReturnSeries>& r) {
  std::vector<cpd::CpdTask> tasks;
  for (const auto& s : r) tasks.push_back({&s, 21, s.dates.front(), s.dates.back(), std::nullopt});
  return tasks;
}

void BM_CpdPanelSerial(benchmark::State& st) {
  const auto r = returns();
  const auto tasks = cpd_tasks(r);
  for (auto _ : st) benchmark::DoNotOptimize(cpd::run_cpd_panel_serial(tasks));
}

void BM_CpdPanelParallel(benchmark::State& st) {
  const auto r = returns();
  const auto tasks = cpd_tasks(r);
  for (auto _ : st) benchmark::DoNotOptimize(cpd::run_cpd_panel(tasks, static_cast<int>(st.range(0))));
}

struct LstmCase {
  dmn::LstmParams params;
  dmn::Batch batch;
};

LstmCase lstm_case() {
  LstmCase c;
  c.params = dmn::init_model(8, dmn::LstmHyperparams{0.1, 10, 64, 1e-3, 1.0, 0}, 3).params;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int s = 0; s < 256; ++s) {
    Eigen::MatrixXd x(8, 63);
    Eigen::VectorXd y(63);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = 0.01 * z(rng);
    c.batch.inputs.push_back(x);
    c.batch.targets.push_back(y);
  }
  return c;
}

void BM_LstmGradientSerial(benchmark::State& st) {
  const auto c = lstm_case();
  dmn::LstmParams g;
  for (auto _ : st) benchmark::DoNotOptimize(dmn::batch_loss_and_gradient_serial(c.params, c.batch, nullptr, g));
}

void BM_LstmGradientParallel(benchmark::State& st) {
  const auto c = lstm_case();
  dmn::LstmParams g;
  for (auto _ : st)
    benchmark::DoNotOptimize(
        dmn::batch_loss_and_gradient(c.params, c.batch, nullptr, g, static_cast<int>(st.range(0))));
}

struct LearnedCase {
  std::vector<data::AssetFrame> frames;
  dmn::LstmModel model;
  bt::Window window;
};

const LearnedCase& learned_case() {
  static const LearnedCase c = [] {
    LearnedCase l;
    l.frames = frames(4, 1300);
    dmn::FeatureConfig f;
    l.model = dmn::init_model(f.size(), dmn::LstmHyperparams{}, 9);
    l.model.features = f;
    l.window.train_start = make_date(2010, 1, 1);
    l.window.train_end = l.window.test_start = make_date(2013, 1, 1);
    l.window.test_end = make_date(2015, 1, 1);
    return l;
  }();
  return c;
}

bt::RunInputs learned_inputs(int workers) {
  const auto& c = learned_case();
  bt::RunInputs in;
  in.frames = &c.frames;
  in.model = &c.model;
  in.workers = workers;
  return in;
}

void BM_LearnedStrategySerial(benchmark::State& st) {
  const auto in = learned_inputs(1);
  const auto spec = strat::parse_strategy("lstm");
  for (auto _ : st) benchmark::DoNotOptimize(bt::run_strategy_serial(spec, in, learned_case().window));
}

void BM_LearnedStrategyParallel(benchmark::State& st) {
  const auto in = learned_inputs(static_cast<int>(st.range(0)));
  const auto spec = strat::parse_strategy("lstm");
  for (auto _ : st) benchmark::DoNotOptimize(bt::run_strategy(spec, in, learned_case().window));
}

}  // namespace

BENCHMARK(BM_CpdPanelSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CpdPanelParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LstmGradientSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LstmGradientParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LearnedStrategySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LearnedStrategyParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
