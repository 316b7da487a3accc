#include "cpdmom/optimizer.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace cpdmom::opt {

namespace {

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Mask of variables free to move: not pinned at a bound by the gradient.
Eigen::VectorXd free_mask(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi) {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) m[i] = 0.0;
  }
  return m;
}

struct Pair {
  Eigen::VectorXd s, y;
  double rho;
};

Eigen::VectorXd two_loop(const std::deque<Pair>& mem, const Eigen::VectorXd& g, const Eigen::VectorXd& mask) {
  Eigen::VectorXd q = g.cwiseProduct(mask);
  std::vector<double> alpha(mem.size());
  for (std::size_t k = mem.size(); k-- > 0;) {
    const auto& p = mem[k];
    alpha[k] = p.rho * p.s.cwiseProduct(mask).dot(q);
    q -= alpha[k] * p.y.cwiseProduct(mask);
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    const double yy = last.y.squaredNorm();
    if (yy > 0.0) q *= last.s.dot(last.y) / yy;
  }
  for (std::size_t k = 0; k < mem.size(); ++k) {
    const auto& p = mem[k];
    const double beta = p.rho * p.y.cwiseProduct(mask).dot(q);
    q += (alpha[k] - beta) * p.s.cwiseProduct(mask);
  }
  return -q.cwiseProduct(mask);
}

}  // namespace

Result minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                    const Eigen::VectorXd& upper, const Options& options) {
  Result res;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = project(x0, lower, upper);
  Eigen::VectorXd g(n);
  double fx = f(x, g);
  res.evaluations = 1;
  res.x = x;
  res.value = fx;
  if (!std::isfinite(fx) || !g.allFinite()) return res;

  std::deque<Pair> mem;
  Eigen::VectorXd g_new(n);
  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it;
    const Eigen::VectorXd mask = free_mask(x, g, lower, upper);
    const Eigen::VectorXd pg = g.cwiseProduct(mask);
    if (pg.lpNorm<Eigen::Infinity>() < options.gradient_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd d = two_loop(mem, g, mask);
    if (!(d.dot(g) < 0.0) || !d.allFinite()) {
      mem.clear();
      d = -pg;
    }

    double step = 1.0;
    if (mem.empty()) step = std::min(1.0, 1.0 / pg.norm());
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (step * dmax > options.max_step) step = options.max_step / dmax;

    bool accepted = false;
    Eigen::VectorXd x_new(n);
    double f_new = fx;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = project(x + step * d, lower, upper);
      const double decrease = g.dot(x_new - x);
      if (decrease < 0.0) {
        f_new = f(x_new, g_new);
        ++res.evaluations;
        if (std::isfinite(f_new) && g_new.allFinite() && f_new <= fx + 1e-4 * decrease) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!mem.empty()) {
        mem.clear();
        continue;
      }
      // No descent available along the projected gradient: stationary to
      // working precision.
      res.converged = true;
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm()) {
      mem.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(mem.size()) > options.memory) mem.pop_front();
    }

    const double rel = (fx - f_new) / std::max({std::abs(fx), std::abs(f_new), 1.0});
    x = x_new;
    fx = f_new;
    g = g_new;
    res.iterations = it + 1;
    if (rel < options.relative_tol) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace cpdmom::opt
