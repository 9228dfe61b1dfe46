#pragma once

#include <stdexcept>
#include <string>

namespace mccot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Validation errors: the caller handed in something malformed.
class ConfigError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };

// Runtime errors: the inputs were fine but the computation went wrong.
class NumericError : public Error { using Error::Error; };
class GenerationError : public Error { using Error::Error; };

/// True for the error kinds the CLI reports as validation failures (exit 1).
inline bool is_validation_error(const Error& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
         dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
         dynamic_cast<const VocabularyError*>(&e) || dynamic_cast<const ParseError*>(&e);
}

}  // namespace mccot
