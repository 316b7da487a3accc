#pragma once

// Gaussian-process changepoint scoring on a single standardized window.
//
// Inputs live on integer time offsets 0..l (oldest to newest). Two models
// are fitted by type-II maximum likelihood: a stationary Matern-3/2 GP and
// a changepoint GP that blends two Matern-3/2 kernels through a sigmoid in
// time. The drop in negative log marginal likelihood between them is the
// changepoint score; the fitted sigmoid midpoint is the location.

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cpdmom/data.hpp"

namespace cpdmom::gp {

struct MaternHypers {
  double lambda = 1.0;   // length-scale, in time-offset units
  double sigma_h = 1.0;  // output scale
  double sigma_n = 1.0;  // noise std
};

// The first kernel governs the region before c, the second after it.
struct ChangepointHypers {
  MaternHypers k1;
  MaternHypers k2;  // sigma_n of k1/k2 is unused; the shared noise is below
  double c = 0.0;   // changepoint location, time-offset units
  double s = 1.0;   // sigmoid steepness
  double sigma_n = 1.0;
};

enum class FitKind { matern, changepoint };

struct GpFit {
  FitKind kind = FitKind::matern;
  MaternHypers matern;
  ChangepointHypers changepoint;
  double nlml = 0.0;       // nats
  double init_nlml = 0.0;  // at the starting hyperparameters
  bool converged = false;
  int iterations = 0;
  bool reinitialized = false;  // changepoint fit needed the fallback start
};

// --- kernels -------------------------------------------------------------

double matern32(double distance, double lambda, double sigma_h);

// (sigma(x) sigma(x'), (1 - sigma(x)) (1 - sigma(x'))) for the logistic
// sigma(x) = 1 / (1 + exp(-s (x - c))).
std::pair<double, double> sigmoid_blend(double x, double xp, double c, double s);

double changepoint_kernel(double x, double xp, const ChangepointHypers& h);

// Hard switch: k1 when both inputs precede c, k2 when both are at/after c,
// zero across the boundary. The infinite-steepness limit of
// changepoint_kernel.
double region_switch_kernel(double x, double xp, const MaternHypers& k1, const MaternHypers& k2, double c);

// Kernel matrices over offsets 0..n-1, noise not included.
Eigen::MatrixXd matern_matrix(int n, const MaternHypers& h);
Eigen::MatrixXd changepoint_matrix(int n, const ChangepointHypers& h);

// --- likelihood ----------------------------------------------------------

// 0.5 y' V^-1 y + 0.5 log|V| + n/2 log(2 pi) through a Cholesky factor.
// Throws NonPsdError when V is not numerically positive definite.
double nlml(std::span<const double> y, const Eigen::MatrixXd& V);
double nlml(const data::StandardizedWindow& w, const MaternHypers& h);
double nlml(const data::StandardizedWindow& w, const ChangepointHypers& h);

// Jitter added to the diagonal, in order, until V factorizes.
inline constexpr double kJitterLadder[] = {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4};

// Unconstrained parameterizations used by the optimizer, exposed for tests.
// Matern:      [log lambda, log sigma_h, log sigma_n]
// Changepoint: [log lambda1, log sigma_h1, log lambda2, log sigma_h2, c, log s, log sigma_n]
Eigen::VectorXd pack(const MaternHypers& h);
MaternHypers unpack_matern(const Eigen::VectorXd& x);
Eigen::VectorXd pack(const ChangepointHypers& h);
ChangepointHypers unpack_changepoint(const Eigen::VectorXd& x);

// NLML and its gradient in the packed coordinates. Applies the jitter
// ladder; returns +inf if every rung fails.
double matern_objective(std::span<const double> y, const Eigen::VectorXd& x, Eigen::VectorXd& grad);
double changepoint_objective(std::span<const double> y, const Eigen::VectorXd& x, Eigen::VectorXd& grad);

struct FitBounds {
  double lambda_min = 1e-2, lambda_max = 1e4;
  double sigma_h_min = 1e-4, sigma_h_max = 1e2;
  double sigma_n_min = 1e-3, sigma_n_max = 1e2;
  double s_min = 1e-2, s_max = 1e3;
  double c_margin = 1e-3;  // fraction of l kept clear of each window edge
};

// --- fits ----------------------------------------------------------------

// All hyperparameters start at 1.
GpFit fit_matern(const data::StandardizedWindow& w, const FitBounds& bounds = {});

// Starts k1 = k2 = the Matern fit, c = l/2, s = 1. If that start fails,
// retries once from all-ones with c = l/2. Throws FitFailureError when both
// attempts fail.
GpFit fit_changepoint(const data::StandardizedWindow& w, const GpFit& matern_fit, const FitBounds& bounds = {});

struct ScoreLocation {
  double nu;
  double gamma;
};

// nu = 1 - 1/(1 + exp(-(nlml_c - nlml_m))), clamped into the open unit
// interval; gamma = (c - (t - l)) / l clamped to [0, 1]. `c` and `t` are on
// the same axis (absolute or offsets).
ScoreLocation cpd_score_location(double nlml_matern, double nlml_changepoint, double c, double t, int lookback);

}  // namespace cpdmom::gp
