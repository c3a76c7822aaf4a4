#ifndef MTDL_ERRORS_HPP_
#define MTDL_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtdl {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree. Messages name both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (dimension 0, threshold outside (0,1), ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in a state that does not allow it (e.g. backward twice).
class StateError : public Error {
 public:
  using Error::Error;
};

// Pooling over an empty item list.
class EmptyPoolError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the byte offset at which parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Filesystem-level failure (missing file, short write, ...).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtdl

#endif  // MTDL_ERRORS_HPP_
