#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

namespace encwatt {

// Root of every error the library throws. The subclasses map onto the
// CLI exit codes (see tools/encwatt.cpp).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

// Integration window or requested span not covered by a trace.
class RangeError : public Error {
public:
  using Error::Error;
};

// A trace that violates PowerTrace invariants. `line` is 0 when the trace
// did not come from a file.
class MalformedTraceError : public Error {
public:
  explicit MalformedTraceError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

// Structural problems in an input file: wrong header, missing columns,
// unparseable fields.
class FormatError : public Error {
public:
  using Error::Error;
};

class InvalidMeasurementError : public Error {
public:
  using Error::Error;
};

// Meter could not deliver samples.
class AcquisitionError : public Error {
public:
  using Error::Error;
};

class CorruptCounterError : public AcquisitionError {
public:
  using AcquisitionError::AcquisitionError;
};

class EncodeFailedError : public Error {
public:
  EncodeFailedError(const std::string& what, std::string log_tail = {})
      : Error(what), log_tail_(std::move(log_tail)) {}
  const std::string& log_tail() const noexcept { return log_tail_; }

private:
  std::string log_tail_;
};

class SingularFitError : public Error {
public:
  using Error::Error;
};

class UnderdeterminedFitError : public Error {
public:
  using Error::Error;
};

class FitRejectedError : public Error {
public:
  using Error::Error;
};

// Thrown by the repetition loop when one repetition fails. Keeps the
// energies of the repetitions that completed and the original exception.
class MeasurementError : public Error {
public:
  MeasurementError(std::size_t repetition, std::vector<double> prior,
                   std::exception_ptr cause, const std::string& cause_what)
      : Error("repetition " + std::to_string(repetition) + " failed: " + cause_what),
        repetition_(repetition), prior_(std::move(prior)), cause_(std::move(cause)) {}

  // 1-based index of the failing repetition.
  std::size_t repetition() const noexcept { return repetition_; }
  const std::vector<double>& prior_energies() const noexcept { return prior_; }
  const std::exception_ptr& cause() const noexcept { return cause_; }

private:
  std::size_t repetition_;
  std::vector<double> prior_;
  std::exception_ptr cause_;
};

// Fit failure inside a cross-validation fold.
class FoldError : public Error {
public:
  FoldError(std::size_t fold, const std::string& what)
      : Error("fold " + std::to_string(fold) + ": " + what), fold_(fold) {}
  std::size_t fold() const noexcept { return fold_; }

private:
  std::size_t fold_;
};

}  // namespace encwatt
