#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ncmap {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unreadable input: files, shapes, formats, arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::int64_t offset)
      : InputError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  static ParseError at_line(const std::string& what, std::int64_t line) {
    ParseError e(what + " (line " + std::to_string(line) + ")");
    e.line_ = line;
    return e;
  }
  std::int64_t offset() const { return offset_; }
  std::int64_t line() const { return line_; }

 private:
  explicit ParseError(const std::string& what) : InputError(what) {}
  std::int64_t offset_ = -1;
  std::int64_t line_ = -1;
};

class UnsupportedFormat : public InputError {
 public:
  using InputError::InputError;
};

class UnsupportedVersion : public InputError {
 public:
  using InputError::InputError;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class IoError : public InputError {
 public:
  using InputError::InputError;
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class DegenerateParameter : public Error {
 public:
  using Error::Error;
};

class MeshNotClosed : public Error {
 public:
  using Error::Error;
};

/// Zero variance where a regression or correlation needs spread.
class UndefinedStatistic : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training, inference or optimization.
class NumericFault : public Error {
 public:
  explicit NumericFault(const std::string& what, std::int64_t iteration = -1)
      : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
        iteration_(iteration) {}
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

}  // namespace ncmap
