#include "cpdmom/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "cpdmom/errors.hpp"
#include "cpdmom/optimizer.hpp"

namespace cpdmom::gp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Matern-3/2 value and derivative with respect to log(lambda).
struct MaternTerm {
  double k;
  double dlog_lambda;
};

MaternTerm matern_term(double d, double lambda, double sigma_h) {
  const double a = kSqrt3 * d / lambda;
  const double e = std::exp(-a);
  const double s2 = sigma_h * sigma_h;
  return {s2 * (1.0 + a) * e, s2 * a * a * e};
}

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  bool ok = false;
};

// Cholesky of V (+ jitter ladder when `allow_jitter`).
Factorization factorize(Eigen::MatrixXd V, bool allow_jitter) {
  Factorization f;
  const Eigen::Index n = V.rows();
  double applied = 0.0;
  for (double jitter : kJitterLadder) {
    if (jitter > 0.0 && !allow_jitter) break;
    V.diagonal().array() += jitter - applied;
    applied = jitter;
    f.llt.compute(V);
    if (f.llt.info() == Eigen::Success) {
      const auto& L = f.llt.matrixLLT();
      bool good = true;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i))) good = false;
      }
      if (good) {
        f.ok = true;
        return f;
      }
    }
  }
  return f;
}

double nlml_from_factor(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& y, Eigen::VectorXd* alpha) {
  Eigen::VectorXd a = llt.solve(y);
  double logdet_half = 0.0;
  const auto& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) logdet_half += std::log(L(i, i));
  const double value = 0.5 * y.dot(a) + logdet_half + static_cast<double>(y.size()) * kHalfLog2Pi;
  if (alpha) *alpha = std::move(a);
  return value;
}

// W = V^-1 - alpha alpha'; d nlml / d theta = 0.5 * sum(W .* dV/dtheta).
Eigen::MatrixXd gradient_weights(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& alpha) {
  const Eigen::Index n = alpha.size();
  Eigen::MatrixXd W = llt.solve(Eigen::MatrixXd::Identity(n, n));
  W.noalias() -= alpha * alpha.transpose();
  return W;
}

Eigen::VectorXd to_vector(std::span<const double> y) {
  return Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
}

}  // namespace

double matern32(double distance, double lambda, double sigma_h) {
  return matern_term(std::abs(distance), lambda, sigma_h).k;
}

std::pair<double, double> sigmoid_blend(double x, double xp, double c, double s) {
  const double sx = logistic(s * (x - c));
  const double sxp = logistic(s * (xp - c));
  const double bx = logistic(-s * (x - c));
  const double bxp = logistic(-s * (xp - c));
  return {sx * sxp, bx * bxp};
}

double changepoint_kernel(double x, double xp, const ChangepointHypers& h) {
  const auto [after, before] = sigmoid_blend(x, xp, h.c, h.s);
  const double d = std::abs(x - xp);
  return matern32(d, h.k1.lambda, h.k1.sigma_h) * before + matern32(d, h.k2.lambda, h.k2.sigma_h) * after;
}

double region_switch_kernel(double x, double xp, const MaternHypers& k1, const MaternHypers& k2, double c) {
  const double d = std::abs(x - xp);
  if (x < c && xp < c) return matern32(d, k1.lambda, k1.sigma_h);
  if (x >= c && xp >= c) return matern32(d, k2.lambda, k2.sigma_h);
  return 0.0;
}

Eigen::MatrixXd matern_matrix(int n, const MaternHypers& h) {
  Eigen::MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      K(i, j) = K(j, i) = matern32(i - j, h.lambda, h.sigma_h);
    }
  }
  return K;
}

Eigen::MatrixXd changepoint_matrix(int n, const ChangepointHypers& h) {
  Eigen::MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      K(i, j) = K(j, i) = changepoint_kernel(i, j, h);
    }
  }
  return K;
}

double nlml(std::span<const double> y, const Eigen::MatrixXd& V) {
  if (V.rows() != static_cast<Eigen::Index>(y.size()) || V.cols() != V.rows()) {
    throw ValidationError("nlml: covariance size does not match data");
  }
  const auto f = factorize(V, false);
  if (!f.ok) throw NonPsdError("nlml: covariance matrix is not positive definite");
  return nlml_from_factor(f.llt, to_vector(y), nullptr);
}

double nlml(const data::StandardizedWindow& w, const MaternHypers& h) {
  const int n = static_cast<int>(w.values.size());
  Eigen::MatrixXd V = matern_matrix(n, h);
  V.diagonal().array() += h.sigma_n * h.sigma_n;
  return nlml(w.values, V);
}

double nlml(const data::StandardizedWindow& w, const ChangepointHypers& h) {
  const int n = static_cast<int>(w.values.size());
  Eigen::MatrixXd V = changepoint_matrix(n, h);
  V.diagonal().array() += h.sigma_n * h.sigma_n;
  return nlml(w.values, V);
}

Eigen::VectorXd pack(const MaternHypers& h) {
  Eigen::VectorXd x(3);
  x << std::log(h.lambda), std::log(h.sigma_h), std::log(h.sigma_n);
  return x;
}

MaternHypers unpack_matern(const Eigen::VectorXd& x) {
  return {std::exp(x[0]), std::exp(x[1]), std::exp(x[2])};
}

Eigen::VectorXd pack(const ChangepointHypers& h) {
  Eigen::VectorXd x(7);
  x << std::log(h.k1.lambda), std::log(h.k1.sigma_h), std::log(h.k2.lambda), std::log(h.k2.sigma_h), h.c,
      std::log(h.s), std::log(h.sigma_n);
  return x;
}

ChangepointHypers unpack_changepoint(const Eigen::VectorXd& x) {
  ChangepointHypers h;
  h.k1 = {std::exp(x[0]), std::exp(x[1]), std::exp(x[6])};
  h.k2 = {std::exp(x[2]), std::exp(x[3]), std::exp(x[6])};
  h.c = x[4];
  h.s = std::exp(x[5]);
  h.sigma_n = std::exp(x[6]);
  return h;
}

double matern_objective(std::span<const double> y, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  const auto h = unpack_matern(x);
  const Eigen::Index n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd V(n, n), dL(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto t = matern_term(static_cast<double>(i - j), h.lambda, h.sigma_h);
      V(i, j) = V(j, i) = t.k;
      dL(i, j) = dL(j, i) = t.dlog_lambda;
    }
  }
  const double noise = h.sigma_n * h.sigma_n;
  V.diagonal().array() += noise;

  grad.setZero(3);
  const auto f = factorize(V, true);
  if (!f.ok) return std::numeric_limits<double>::infinity();
  Eigen::VectorXd alpha;
  const double value = nlml_from_factor(f.llt, to_vector(y), &alpha);
  const Eigen::MatrixXd W = gradient_weights(f.llt, alpha);

  // dV/dlog(sigma_h) = 2 K = 2 (V - noise I).
  Eigen::MatrixXd K = V;
  K.diagonal().array() -= noise;
  grad[0] = 0.5 * W.cwiseProduct(dL).sum();
  grad[1] = W.cwiseProduct(K).sum();
  grad[2] = W.trace() * noise;
  return value;
}

double changepoint_objective(std::span<const double> y, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  const auto h = unpack_changepoint(x);
  const Eigen::Index n = static_cast<Eigen::Index>(y.size());

  // Per-point sigmoid weights: a = before-weight, b = after-weight, with
  // their derivatives in c and log(s).
  Eigen::VectorXd a(n), b(n), q(n), p(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = h.s * (static_cast<double>(i) - h.c);
    b[i] = logistic(z);
    a[i] = logistic(-z);
    q[i] = h.s * a[i] * b[i];  // d b/d c = -q, d a/d c = +q
    p[i] = z * a[i] * b[i];    // d b/d log s = +p, d a/d log s = -p
  }

  Eigen::MatrixXd V(n, n), dl1(n, n), dh1(n, n), dl2(n, n), dh2(n, n), dc(n, n), ds(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double d = static_cast<double>(i - j);
      const auto t1 = matern_term(d, h.k1.lambda, h.k1.sigma_h);
      const auto t2 = matern_term(d, h.k2.lambda, h.k2.sigma_h);
      const double w1 = a[i] * a[j];
      const double w2 = b[i] * b[j];
      V(i, j) = V(j, i) = t1.k * w1 + t2.k * w2;
      dl1(i, j) = dl1(j, i) = t1.dlog_lambda * w1;
      dh1(i, j) = dh1(j, i) = 2.0 * t1.k * w1;
      dl2(i, j) = dl2(j, i) = t2.dlog_lambda * w2;
      dh2(i, j) = dh2(j, i) = 2.0 * t2.k * w2;
      dc(i, j) = dc(j, i) = t1.k * (q[i] * a[j] + a[i] * q[j]) - t2.k * (q[i] * b[j] + b[i] * q[j]);
      ds(i, j) = ds(j, i) = -t1.k * (p[i] * a[j] + a[i] * p[j]) + t2.k * (p[i] * b[j] + b[i] * p[j]);
    }
  }
  const double noise = h.sigma_n * h.sigma_n;
  V.diagonal().array() += noise;

  grad.setZero(7);
  const auto f = factorize(V, true);
  if (!f.ok) return std::numeric_limits<double>::infinity();
  Eigen::VectorXd alpha;
  const double value = nlml_from_factor(f.llt, to_vector(y), &alpha);
  const Eigen::MatrixXd W = gradient_weights(f.llt, alpha);

  grad[0] = 0.5 * W.cwiseProduct(dl1).sum();
  grad[1] = 0.5 * W.cwiseProduct(dh1).sum();
  grad[2] = 0.5 * W.cwiseProduct(dl2).sum();
  grad[3] = 0.5 * W.cwiseProduct(dh2).sum();
  grad[4] = 0.5 * W.cwiseProduct(dc).sum();
  grad[5] = 0.5 * W.cwiseProduct(ds).sum();
  grad[6] = W.trace() * noise;
  return value;
}

namespace {

Eigen::VectorXd log_bounds(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = std::log(x);
  return v;
}

opt::Options fit_options() {
  opt::Options o;
  o.max_iterations = 200;
  o.gradient_tol = 1e-5;
  o.relative_tol = 1e-9;
  return o;
}

GpFit run_changepoint(std::span<const double> y, const ChangepointHypers& start, int lookback,
                      const FitBounds& b) {
  Eigen::VectorXd lo(7), hi(7);
  const double eps = b.c_margin * lookback;
  lo << std::log(b.lambda_min), std::log(b.sigma_h_min), std::log(b.lambda_min), std::log(b.sigma_h_min), eps,
      std::log(b.s_min), std::log(b.sigma_n_min);
  hi << std::log(b.lambda_max), std::log(b.sigma_h_max), std::log(b.lambda_max), std::log(b.sigma_h_max),
      lookback - eps, std::log(b.s_max), std::log(b.sigma_n_max);

  auto objective = [y](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return changepoint_objective(y, x, g); };
  Eigen::VectorXd x0 = pack(start).cwiseMax(lo).cwiseMin(hi);
  Eigen::VectorXd g0;
  const double init = changepoint_objective(y, x0, g0);
  if (!std::isfinite(init)) throw FitFailureError("changepoint fit: infeasible starting point");

  const auto r = opt::minimize_box(objective, x0, lo, hi, fit_options());
  if (!std::isfinite(r.value)) throw FitFailureError("changepoint fit: non-finite objective");
  GpFit fit;
  fit.kind = FitKind::changepoint;
  fit.changepoint = unpack_changepoint(r.x);
  fit.nlml = r.value;
  fit.init_nlml = init;
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  return fit;
}

}  // namespace

GpFit fit_matern(const data::StandardizedWindow& w, const FitBounds& b) {
  const std::span<const double> y = w.values;
  const Eigen::VectorXd lo = log_bounds({b.lambda_min, b.sigma_h_min, b.sigma_n_min});
  const Eigen::VectorXd hi = log_bounds({b.lambda_max, b.sigma_h_max, b.sigma_n_max});
  auto objective = [y](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return matern_objective(y, x, g); };

  Eigen::VectorXd x0 = pack(MaternHypers{1.0, 1.0, 1.0}).cwiseMax(lo).cwiseMin(hi);
  Eigen::VectorXd g0;
  const double init = matern_objective(y, x0, g0);
  if (!std::isfinite(init)) throw FitFailureError("matern fit: infeasible starting point");

  const auto r = opt::minimize_box(objective, x0, lo, hi, fit_options());
  if (!std::isfinite(r.value)) throw FitFailureError("matern fit: non-finite objective");
  GpFit fit;
  fit.kind = FitKind::matern;
  fit.matern = unpack_matern(r.x);
  fit.nlml = r.value;
  fit.init_nlml = init;
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  return fit;
}

GpFit fit_changepoint(const data::StandardizedWindow& w, const GpFit& matern_fit, const FitBounds& bounds) {
  const std::span<const double> y = w.values;
  const double mid = 0.5 * w.lookback;

  ChangepointHypers start;
  start.k1 = matern_fit.matern;
  start.k2 = matern_fit.matern;
  start.sigma_n = matern_fit.matern.sigma_n;
  start.c = mid;
  start.s = 1.0;
  try {
    return run_changepoint(y, start, w.lookback, bounds);
  } catch (const FitFailureError&) {
  }

  ChangepointHypers ones;
  ones.c = mid;
  try {
    GpFit fit = run_changepoint(y, ones, w.lookback, bounds);
    fit.reinitialized = true;
    return fit;
  } catch (const FitFailureError&) {
    throw FitFailureError("changepoint fit failed from both starting points");
  }
}

ScoreLocation cpd_score_location(double nlml_matern, double nlml_changepoint, double c, double t, int lookback) {
  const double delta = nlml_changepoint - nlml_matern;
  // 1 - 1/(1 + e^-delta) == 1/(1 + e^delta)
  double nu = logistic(-delta);
  nu = std::clamp(nu, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  double gamma = (c - (t - lookback)) / lookback;
  gamma = std::clamp(gamma, 0.0, 1.0);
  return {nu, gamma};
}

}  // namespace cpdmom::gp
