// Error types shared across the library. Every failure is reported by
// exception; the CLI maps the families below onto process exit codes.
#pragma once

#include <stdexcept>
#include <string>

namespace trinityx {

/// Operand shapes do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (tau <= 0,
/// a distribution off the simplex, a negative loss...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Index outside the valid range (class label, expert index).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid argument that is neither a shape nor a domain problem (empty
/// corpus, zero experts).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf where a finite value was promised.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line` is 1-based, or 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Bad or incomplete run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failure or corrupted container.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trinityx
