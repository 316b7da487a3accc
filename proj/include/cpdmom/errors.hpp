#pragma once

#include <stdexcept>
#include <string>

namespace cpdmom {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV rows, config lines, checkpoints).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Standardization window with (numerically) zero spread.
class DegenerateWindowError : public Error {
 public:
  using Error::Error;
};

// Covariance matrix failed Cholesky factorization.
class NonPsdError : public Error {
 public:
  using Error::Error;
};

class FitFailureError : public Error {
 public:
  using Error::Error;
};

// Sharpe loss over a batch whose captured returns have ~zero spread.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// A metric whose denominator is zero (e.g. Calmar with no drawdown).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpdmom
