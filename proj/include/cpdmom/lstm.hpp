#pragma once

// Single-layer LSTM with a per-step tanh position head, trained directly on
// the (negative, annualized) Sharpe ratio of the returns its positions earn.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cpdmom/features.hpp"

namespace cpdmom::dmn {

struct LstmHyperparams {
  double dropout_rate = 0.1;
  int hidden_size = 5;
  int minibatch_size = 64;
  double learning_rate = 1e-3;
  double max_grad_norm = 1.0;
  int cpd_lookback = 0;  // 0: model without changepoint inputs
};

// Gate blocks are stacked [input; forget; cell candidate; output], each
// hidden_size rows.
struct LstmParams {
  Eigen::MatrixXd W;      // 4H x D, input weights
  Eigen::MatrixXd U;      // 4H x H, recurrent weights
  Eigen::VectorXd b;      // 4H
  Eigen::VectorXd w_out;  // H, position head
  double b_out = 0.0;

  static LstmParams zeros(int input_size, int hidden_size);
  int input_size() const { return static_cast<int>(W.cols()); }
  int hidden_size() const { return static_cast<int>(U.cols()); }
  Eigen::Index count() const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  LstmParams& operator+=(const LstmParams& o);
};

struct LstmModel {
  LstmParams params;
  LstmHyperparams hyper;
  FeatureConfig features;
  std::uint64_t seed = 0;
};

// Weights uniform in (-1/sqrt(H), 1/sqrt(H)), biases zero except the forget
// gate bias at 1.
LstmModel init_model(int input_size, const LstmHyperparams& hyper, std::uint64_t seed);

// Inverted-dropout masks for one sequence: a per-feature input mask held
// fixed over time and a per-step, per-unit mask on the LSTM outputs.
struct DropoutMasks {
  Eigen::VectorXd input;   // D
  Eigen::MatrixXd output;  // H x tau
};
DropoutMasks make_masks(int input_size, int hidden_size, int steps, double rate, std::mt19937_64& rng);

// Activations kept for backpropagation.
struct SequenceCache {
  Eigen::MatrixXd x;      // D x tau (masked inputs)
  Eigen::MatrixXd gates;  // 4H x tau (post-activation)
  Eigen::MatrixXd c;      // H x (tau+1), column 0 is the zero initial state
  Eigen::MatrixXd h;      // H x (tau+1)
  Eigen::MatrixXd h_out;  // H x tau, h after output dropout
  Eigen::VectorXd positions;
};

// Positions in (-1, 1) for each step of `inputs` (D x tau), starting from
// zero states. `masks` null means dropout off.
Eigen::VectorXd lstm_forward(const LstmParams& params, const Eigen::MatrixXd& inputs,
                             const DropoutMasks* masks = nullptr, SequenceCache* cache = nullptr);

// -sqrt(252) mean(R) / std(R) with the population std. Throws
// DegenerateBatchError when std < 1e-12.
double sharpe_loss(std::span<const double> captured);
// Loss and dLoss/dR_k.
double sharpe_loss_gradient(std::span<const double> captured, std::vector<double>& grad);

struct Batch {
  std::vector<Eigen::MatrixXd> inputs;   // each D x tau
  std::vector<Eigen::VectorXd> targets;  // each tau: vol-scaled next-day returns
  std::size_t size() const { return inputs.size(); }
};

// Captured returns X .* target for every (sequence, step), sequence-major.
std::vector<double> captured_returns(const LstmParams& params, const Batch& batch);
double batch_loss(const LstmParams& params, const Batch& batch);

// Sharpe loss over the whole batch and its exact gradient by
// backpropagation through time. Sequences run in parallel; per-sequence
// gradients are reduced in fixed chunks in index order, so the result is
// bit-identical for any worker count. `masks` null means dropout off.
double batch_loss_and_gradient(const LstmParams& params, const Batch& batch, const std::vector<DropoutMasks>* masks,
                               LstmParams& grad, int workers = 0);

// Same contract, plain sequential loops. Reference for tests and benchmarks.
double batch_loss_and_gradient_serial(const LstmParams& params, const Batch& batch,
                                      const std::vector<DropoutMasks>* masks, LstmParams& grad);

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

// Scales grad to global L2 norm <= max_grad_norm, then one bias-corrected
// Adam update of `params` in place. Throws ValidationError on a non-finite
// gradient.
void clip_and_adam_step(Eigen::VectorXd& params, Eigen::VectorXd grad, double learning_rate, double max_grad_norm,
                        AdamState& state);

// --- checkpoints ----------------------------------------------------------
// Text format, documented in README. Readers accept any 1.x file.

void save_model(const std::filesystem::path& path, const LstmModel& model);
LstmModel load_model(const std::filesystem::path& path);

}  // namespace cpdmom::dmn
