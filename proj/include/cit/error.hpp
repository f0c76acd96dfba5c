#pragma once

#include <stdexcept>
#include <string>

namespace cit {

// Error taxonomy shared by every module. All derive from std::runtime_error so
// callers that do not care about the category can catch a single type.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Raised when a metric has no defined value for its input (e.g. AUC without
// negatives). Callers that aggregate treat it as "skip", not as a failure.
struct NotComputable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cit
