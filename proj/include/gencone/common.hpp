#pragma once

#include <stdexcept>
#include <string>

namespace gencone {

// Base class for all library errors. The CLI maps these to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };       // malformed input document
struct IntegrityError : Error { using Error::Error; };   // record violates a dataset invariant
struct AlignmentError : Error { using Error::Error; };   // answer span maps to no surviving token
struct ContractError : Error { using Error::Error; };    // precondition or shape violation
struct ConfigError : Error { using Error::Error; };      // bad hyperparameter or flag combination
struct DivergenceError : Error { using Error::Error; };  // non-finite training loss

}  // namespace gencone
