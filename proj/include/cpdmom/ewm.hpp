#pragma once

#include <cmath>
#include <cstddef>

namespace cpdmom {

// Running exponentially weighted mean/variance with normalized weights
// w_k = (1-alpha)^(n-1-k). variance() is bias-corrected for the effective
// sample size, matching the usual "adjusted" EWM estimator.
class EwmStats {
 public:
  explicit EwmStats(double alpha) : decay_(1.0 - alpha) {}

  static EwmStats from_span(double span) { return EwmStats(2.0 / (span + 1.0)); }
  static EwmStats from_halflife(double halflife) { return EwmStats(1.0 - std::exp(std::log(0.5) / halflife)); }

  void push(double x) {
    const double w_old = decay_ * weight_;
    weight_ = w_old + 1.0;
    weight_sq_ = decay_ * decay_ * weight_sq_ + 1.0;
    const double delta = x - mean_;
    mean_ += delta / weight_;
    m2_ = decay_ * m2_ + delta * (x - mean_);
    ++count_;
  }

  std::size_t count() const { return count_; }
  double mean() const { return mean_; }

  // NaN until two observations are available.
  double variance() const {
    if (count_ < 2) return std::nan("");
    const double denom = weight_ - weight_sq_ / weight_;
    const double v = m2_ / denom;
    return v > 0.0 ? v : 0.0;
  }
  double stddev() const { return std::sqrt(variance()); }

 private:
  double decay_;
  double weight_ = 0.0;
  double weight_sq_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace cpdmom
