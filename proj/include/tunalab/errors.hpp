#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tunalab {

// Every failure surfaced by the library derives from one of the two standard
// bases so callers can catch broadly (std::invalid_argument / runtime_error)
// or narrowly (the concrete types below).

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t epoch)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class DegenerateLabels : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedForKind : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TraversalDiverged : public std::runtime_error {
 public:
  explicit TraversalDiverged(std::size_t step)
      : std::runtime_error("traversal diverged at step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class InversionFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tunalab
