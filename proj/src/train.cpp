#include "cpdmom/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "cpdmom/errors.hpp"

namespace cpdmom::dmn {

namespace {

void add_sequences(const AssetFeatures& a, const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end,
                   int tau, Batch& out, std::vector<std::string>& symbols) {
  const std::size_t len = static_cast<std::size_t>(tau);
  const std::size_t count = (end - begin) / len;
  for (std::size_t s = end - count * len; s < end; s += len) {
    Eigen::MatrixXd x(a.x.rows(), tau);
    Eigen::VectorXd y(tau);
    for (int t = 0; t < tau; ++t) {
      const std::size_t r = rows[s + static_cast<std::size_t>(t)];
      x.col(t) = a.x.col(static_cast<Eigen::Index>(r));
      y[t] = a.target[r];
    }
    out.inputs.push_back(std::move(x));
    out.targets.push_back(std::move(y));
    symbols.push_back(a.symbol);
  }
}

}  // namespace

Dataset make_dataset(const std::vector<AssetFeatures>& assets, Date start, Date cutoff, const TrainOptions& options) {
  if (options.sequence_length < 1) throw ConfigError("sequence length must be positive");
  if (options.validation_fraction <= 0.0 || options.validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  Dataset d;
  for (const auto& a : assets) {
    if (d.input_size == 0) d.input_size = static_cast<int>(a.x.rows());
    if (a.x.rows() != d.input_size) throw ValidationError("assets disagree on feature count");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      if (a.dates[i] >= start && a.target_dates[i] < cutoff && std::isfinite(a.target[i])) rows.push_back(i);
    }
    const auto n_valid = static_cast<std::size_t>(std::llround(options.validation_fraction * static_cast<double>(rows.size())));
    const std::size_t split = rows.size() - n_valid;
    if (n_valid < static_cast<std::size_t>(options.sequence_length)) continue;
    d.assets.push_back(a.symbol);
    add_sequences(a, rows, 0, split, options.sequence_length, d.train, d.train_symbols);
    add_sequences(a, rows, split, rows.size(), options.sequence_length, d.valid, d.valid_symbols);
  }
  return d;
}

double validation_loss(const LstmParams& params, const Batch& valid) {
  try {
    const double l = batch_loss(params, valid);
    return std::isfinite(l) ? l : std::numeric_limits<double>::infinity();
  } catch (const DegenerateBatchError&) {
    return std::numeric_limits<double>::infinity();
  }
}

TrainResult train(const Dataset& data, const LstmHyperparams& hyper, const FeatureConfig& features,
                  std::uint64_t seed, const TrainOptions& options) {
  if (data.train.size() == 0) throw ConfigError("no training sequences (is the training span long enough?)");
  if (data.valid.size() == 0) throw ConfigError("no validation sequences (need one full sequence per asset)");
  if (hyper.minibatch_size < 1) throw ConfigError("minibatch size must be positive");
  if (features.size() != data.input_size) throw ConfigError("feature configuration does not match the dataset");

  TrainResult res;
  LstmModel model = init_model(data.input_size, hyper, seed);
  model.features = features;
  Eigen::VectorXd theta = model.params.flatten();
  LstmParams work = model.params;
  AdamState adam;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  res.initial_validation_loss = validation_loss(model.params, data.valid);
  double best = res.initial_validation_loss;
  Eigen::VectorXd best_theta = theta;
  int since_best = 0;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb = static_cast<std::size_t>(hyper.minibatch_size);
  const int h = hyper.hidden_size;
  const int tau = static_cast<int>(data.train.inputs.front().cols());

  for (int epoch = 1; epoch <= options.max_epochs && !res.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      Batch batch;
      std::vector<DropoutMasks> masks;
      for (std::size_t k = start; k < std::min(order.size(), start + mb); ++k) {
        batch.inputs.push_back(data.train.inputs[order[k]]);
        batch.targets.push_back(data.train.targets[order[k]]);
        masks.push_back(make_masks(data.input_size, h, tau, hyper.dropout_rate, rng));
      }
      work.assign(theta);
      LstmParams grad;
      try {
        batch_loss_and_gradient(work, batch, &masks, grad, options.workers);
      } catch (const DegenerateBatchError&) {
        ++res.skipped_batches;
        continue;
      }
      try {
        clip_and_adam_step(theta, grad.flatten(), hyper.learning_rate, hyper.max_grad_norm, adam);
      } catch (const ValidationError& e) {
        std::fprintf(stderr, "train: epoch %d aborted: %s\n", epoch, e.what());
        res.aborted = true;
        break;
      }
    }
    if (res.aborted) break;
    work.assign(theta);
    const double v = validation_loss(work, data.valid);
    res.history.push_back(v);
    res.epochs_run = epoch;
    if (v < best) {
      best = v;
      best_theta = theta;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }

  model.params.assign(best_theta);
  res.validation_loss = best;
  res.model = std::move(model);
  return res;
}

std::vector<LstmHyperparams> sample_grid(const SearchGrid& grid, int n_iters, std::uint64_t seed) {
  if (n_iters < 1) throw ConfigError("search needs at least one iteration");
  if (grid.dropout_rate.empty() || grid.hidden_size.empty() || grid.minibatch_size.empty() ||
      grid.learning_rate.empty() || grid.max_grad_norm.empty() || grid.cpd_lookback.empty()) {
    throw ConfigError("every hyperparameter grid needs at least one value");
  }
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const auto& v) {
    std::uniform_int_distribution<std::size_t> u(0, v.size() - 1);
    return v[u(rng)];
  };
  std::vector<LstmHyperparams> out;
  for (int i = 0; i < n_iters; ++i) {
    LstmHyperparams h;
    h.dropout_rate = pick(grid.dropout_rate);
    h.hidden_size = pick(grid.hidden_size);
    h.minibatch_size = pick(grid.minibatch_size);
    h.learning_rate = pick(grid.learning_rate);
    h.max_grad_norm = pick(grid.max_grad_norm);
    h.cpd_lookback = pick(grid.cpd_lookback);
    out.push_back(h);
  }
  return out;
}

SearchResult random_search(const SearchGrid& grid, int n_iters, const TrainFn& train_fn, std::uint64_t seed) {
  const auto configs = sample_grid(grid, n_iters, seed);
  SearchResult out;
  bool found = false;
  for (int i = 0; i < n_iters; ++i) {
    Trial t;
    t.index = i;
    t.hyper = configs[static_cast<std::size_t>(i)];
    t.seed = seed + 0x100000001b3ULL * static_cast<std::uint64_t>(i + 1);
    t.validation_loss = std::numeric_limits<double>::infinity();
    try {
      TrainResult r = train_fn(t.hyper, t.seed);
      t.epochs_run = r.epochs_run;
      if (std::isfinite(r.validation_loss)) {
        t.validation_loss = r.validation_loss;
        if (!found || r.validation_loss < out.best.validation_loss) {
          out.best = std::move(r);
          out.best_index = i;
          found = true;
        }
      } else {
        t.error = "non-finite validation loss";
      }
    } catch (const Error& e) {
      t.error = e.what();
    }
    out.trials.push_back(t);
  }
  if (!found) {
    std::string msg = "all " + std::to_string(n_iters) + " search trials failed:";
    for (const auto& t : out.trials) msg += "\n  trial " + std::to_string(t.index) + ": " + t.error;
    throw ValidationError(msg);
  }
  return out;
}

}  // namespace cpdmom::dmn
