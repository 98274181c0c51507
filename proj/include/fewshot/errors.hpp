#pragma once

#include <stdexcept>
#include <string>

namespace fewshot {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numerics
struct ShapeMismatch : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct DegenerateInput : Error {
  using Error::Error;
};
struct InvalidArgument : Error {
  using Error::Error;
};

// episodes & feature banks
struct InsufficientClasses : Error {
  using Error::Error;
};
struct InsufficientSamples : Error {
  using Error::Error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct TruncatedFile : Error {
  using Error::Error;
};
struct NonFiniteFeature : Error {
  using Error::Error;
};
struct InconsistentDim : Error {
  using Error::Error;
};

// coding & learners
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct DegenerateSubproblem : Error {
  using Error::Error;
};
struct UnsupportedKernelGradient : Error {
  using Error::Error;
};
struct KindMismatch : Error {
  using Error::Error;
};

// transduction
struct StaleCache : Error {
  using Error::Error;
};
struct EmptyQuery : Error {
  using Error::Error;
};

// engine & harness
struct NonFiniteLoss : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct BadFlag : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace fewshot
