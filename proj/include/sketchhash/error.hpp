#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sketchhash {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// A malformed input record; carries the 1-based line it came from.
class RecordError : public Error {
 public:
  RecordError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace sketchhash
