#pragma once

#include <stdexcept>
#include <string>

namespace koopsos {

/// Mismatched vector/matrix/polynomial dimensions.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A problem or expression violates a structural requirement (symmetry,
/// cone tiling, empty program, ...).
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Polynomial degree exceeds the declared bound.
class DegreeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// User-supplied design data (denominator, bounds) is unusable.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset collection or persistence failed.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical integration produced a non-finite state.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double blowup_time)
      : std::runtime_error(what), blowup_time_(blowup_time) {}
  double blowup_time() const { return blowup_time_; }

 private:
  double blowup_time_;
};

/// Region-of-attraction estimation collapsed to an empty set.
class DegenerateRoAError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace koopsos
