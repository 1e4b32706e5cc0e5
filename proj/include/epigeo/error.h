#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epigeo {

// Violated precondition of a public operation (bad sizes, empty inputs, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed encoded image. `offset()` is the byte position where decoding
// stopped making sense.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " +
                           std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Point configuration that does not determine the requested model.
class DegenerateConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Robust estimation finished without an acceptable model.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value appeared in a numerical pipeline.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EPIGEO_CHECK(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::epigeo::ContractError(msg); \
  } while (0)

}  // namespace epigeo
