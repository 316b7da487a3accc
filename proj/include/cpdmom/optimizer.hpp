#pragma once

#include <functional>

#include <Eigen/Dense>

namespace cpdmom::opt {

// Objective returning f(x) and writing its gradient. Return +inf (or NaN)
// to mark x as infeasible; the line search then backs off.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct Options {
  int max_iterations = 200;
  double gradient_tol = 1e-5;  // on the projected gradient, inf-norm
  double relative_tol = 1e-9;  // on the objective decrease per iteration
  int memory = 10;
  double max_step = 4.0;  // cap on the inf-norm of a single trial step
};

struct Result {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
};

// Projected limited-memory BFGS for box constraints lower <= x <= upper.
// Variables sitting on a bound with the gradient pushing outward are held
// fixed for the step; the remaining ones take a two-loop L-BFGS direction
// and the trial point is projected back into the box. Every accepted step
// satisfies an Armijo decrease, so value <= f(project(x0)).
Result minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                    const Eigen::VectorXd& upper, const Options& options = {});

}  // namespace cpdmom::opt
