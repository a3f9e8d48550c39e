#pragma once

#include <stdexcept>
#include <string>

namespace bronchograde {

/// Argument or configuration value outside its documented domain.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file, image, or manifest row could not be read.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was called on inputs that violate its precondition
/// (empty domain, unloaded model, missing artifact).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bronchograde
