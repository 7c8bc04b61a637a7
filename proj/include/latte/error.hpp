#pragma once

#include <stdexcept>
#include <string>

namespace latte {

// Base for every error raised by the library. Subclasses map one-to-one onto
// the failure kinds callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LATTE_DEFINE_ERROR(Name)           \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

LATTE_DEFINE_ERROR(ShapeError);
LATTE_DEFINE_ERROR(DomainError);
LATTE_DEFINE_ERROR(GridError);
LATTE_DEFINE_ERROR(InvalidAggregator);
LATTE_DEFINE_ERROR(InsufficientSamples);
LATTE_DEFINE_ERROR(EmptyLabelSet);
LATTE_DEFINE_ERROR(DegenerateEmbeddings);
LATTE_DEFINE_ERROR(InsufficientBins);
LATTE_DEFINE_ERROR(SingularKrigingSystem);
LATTE_DEFINE_ERROR(ConfigError);
LATTE_DEFINE_ERROR(SplitLeakError);
LATTE_DEFINE_ERROR(ParseError);
LATTE_DEFINE_ERROR(IoError);

#undef LATTE_DEFINE_ERROR

// Raised when a weighted least-squares variogram fit fails to produce a
// finite, converged parameter set. Carries the best residual reached.
class FitDiverged : public Error {
 public:
  FitDiverged(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Raised when a training loss term turns non-finite. `term()` names it.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& term, const std::string& what)
      : Error(what), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace latte
