#pragma once

#include <stdexcept>
#include <string>

namespace nseg {

/// Base class for all nseg exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad hyperparameter, even kernel, K out of range, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (shape mismatch, invalid node id, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Dataset or file problems: missing mask, malformed PGM, bad checkpoint bytes.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training; carries where it happened.
class NumericError : public Error {
 public:
  NumericError(const std::string& msg, int epoch, int batch, double lr)
      : Error(msg), epoch(epoch), batch(batch), lr(lr) {}
  int epoch = 0;
  int batch = 0;
  double lr = 0.0;
};

}  // namespace nseg
