#pragma once

#include <stdexcept>
#include <string>

namespace bbsmc {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Weight vector unusable: non-finite entries, negative entries, zero total
// mass, or a conditional resampling whose reference weight is zero.
struct DegenerateWeightsError : Error {
  using Error::Error;
};

// Numerical failure that survived the built-in repair attempts
// (e.g. a covariance that stays indefinite after jitter).
struct NumericalError : Error {
  using Error::Error;
};

// Invalid model construction or inputs inconsistent with a model's grid.
struct ModelError : Error {
  using Error::Error;
};

}  // namespace bbsmc
