#pragma once

#include <stdexcept>
#include <string>

// Error types thrown across the library. Every failure mode that a caller
// can reasonably branch on gets its own type; all of them derive from Error
// so the CLI can map "bad input" vs "numerical failure" to exit codes.

namespace cpwkit {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input/validation problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DegenerateGeometry : public ConfigError {
 public:
  explicit DegenerateGeometry(const std::string& msg) : ConfigError(msg) {}
};

class DimensionMismatch : public ConfigError {
 public:
  explicit DimensionMismatch(const std::string& msg) : ConfigError(msg) {}
};

// Numerical failures (CLI exit code 3).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

class NonConvergence : public NumericalError {
 public:
  explicit NonConvergence(const std::string& msg) : NumericalError(msg) {}
};

class QuadratureNotConverged : public NumericalError {
 public:
  explicit QuadratureNotConverged(const std::string& msg)
      : NumericalError(msg) {}
};

class AsymmetryTooLarge : public NumericalError {
 public:
  explicit AsymmetryTooLarge(const std::string& msg) : NumericalError(msg) {}
};

class IdentityViolated : public NumericalError {
 public:
  explicit IdentityViolated(const std::string& msg) : NumericalError(msg) {}
};

class SingularMatrix : public NumericalError {
 public:
  explicit SingularMatrix(const std::string& msg) : NumericalError(msg) {}
};

class KappaOutOfRange : public NumericalError {
 public:
  explicit KappaOutOfRange(const std::string& msg) : NumericalError(msg) {}
};

class OnPole : public NumericalError {
 public:
  explicit OnPole(const std::string& msg) : NumericalError(msg) {}
};

class ExactSingular : public NumericalError {
 public:
  explicit ExactSingular(const std::string& msg) : NumericalError(msg) {}
};

class WrongBasin : public NumericalError {
 public:
  explicit WrongBasin(const std::string& msg) : NumericalError(msg) {}
};

class NotMatched : public NumericalError {
 public:
  explicit NotMatched(const std::string& msg) : NumericalError(msg) {}
};

class CaseUnsupported : public NumericalError {
 public:
  explicit CaseUnsupported(const std::string& msg) : NumericalError(msg) {}
};

class DerivativeDegenerate : public NumericalError {
 public:
  explicit DerivativeDegenerate(const std::string& msg)
      : NumericalError(msg) {}
};

class InsufficientSpan : public NumericalError {
 public:
  explicit InsufficientSpan(const std::string& msg) : NumericalError(msg) {}
};

class NoDip : public NumericalError {
 public:
  explicit NoDip(const std::string& msg) : NumericalError(msg) {}
};

class Divergence : public NumericalError {
 public:
  explicit Divergence(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace cpwkit
