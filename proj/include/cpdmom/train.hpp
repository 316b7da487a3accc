#pragma once

// Sequence assembly, minibatch Adam training with early stopping, and random
// hyperparameter search.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpdmom/features.hpp"
#include "cpdmom/lstm.hpp"

namespace cpdmom::dmn {

struct TrainOptions {
  int sequence_length = 63;
  int max_epochs = 300;
  int patience = 25;
  double validation_fraction = 0.1;
  int workers = 0;
};

struct Dataset {
  Batch train;
  Batch valid;
  std::vector<std::string> train_symbols;  // one per train sequence
  std::vector<std::string> valid_symbols;
  std::vector<std::string> assets;         // assets that passed the validation-length rule
  int input_size = 0;
};

// Rows dated on or after `start` whose target date is before `cutoff` are
// split chronologically per asset (first 1 - validation_fraction train, rest
// validation), then cut into non-overlapping sequences aligned to the end of
// each part. Assets without one full validation sequence are left out.
Dataset make_dataset(const std::vector<AssetFeatures>& assets, Date start, Date cutoff,
                     const TrainOptions& options = {});

struct TrainResult {
  LstmModel model;
  double validation_loss = 0.0;          // of the returned parameters
  double initial_validation_loss = 0.0;  // before the first update
  int best_epoch = 0;                    // 0: initial parameters were never beaten
  int epochs_run = 0;
  std::size_t skipped_batches = 0;
  bool aborted = false;                  // non-finite gradient stopped training
  std::vector<double> history;           // validation loss per epoch
};

// Validation Sharpe loss with dropout off; +inf when the batch is degenerate.
double validation_loss(const LstmParams& params, const Batch& valid);

// Throws ConfigError when `data` has no train or validation sequences.
TrainResult train(const Dataset& data, const LstmHyperparams& hyper, const FeatureConfig& features,
                  std::uint64_t seed, const TrainOptions& options = {});

struct SearchGrid {
  std::vector<double> dropout_rate = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<int> hidden_size = {5, 10, 20, 40, 80, 160};
  std::vector<int> minibatch_size = {64, 128, 256};
  std::vector<double> learning_rate = {1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<double> max_grad_norm = {1e-2, 1.0, 1e2};
  std::vector<int> cpd_lookback = {0};  // {0}: no CPD; otherwise searched jointly
};

// Uniform draws with replacement, deterministic in `seed`.
std::vector<LstmHyperparams> sample_grid(const SearchGrid& grid, int n_iters, std::uint64_t seed);

struct Trial {
  int index = 0;
  LstmHyperparams hyper;
  std::uint64_t seed = 0;
  double validation_loss = 0.0;  // +inf for failed trials
  int epochs_run = 0;
  std::string error;
};

struct SearchResult {
  TrainResult best;
  int best_index = 0;
  std::vector<Trial> trials;
};

using TrainFn = std::function<TrainResult(const LstmHyperparams&, std::uint64_t seed)>;

// Runs train_fn on n_iters sampled configurations and keeps the lowest
// finite validation loss (ties go to the earlier trial). Throws
// ValidationError listing every trial if none produced a finite loss.
SearchResult random_search(const SearchGrid& grid, int n_iters, const TrainFn& train_fn, std::uint64_t seed);

}  // namespace cpdmom::dmn
