#pragma once

#include <stdexcept>
#include <string>

namespace precond {

/// Operand shapes do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the documented domain (k > n, b < 2, bad enum, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A decomposition met a (numerically) singular input.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(const std::string& what, std::size_t column)
      : std::runtime_error(what), column_(column) {}
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

/// Operation called out of order (e.g. eigenvalue tracking before covariance).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace precond
