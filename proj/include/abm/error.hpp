#pragma once

#include <stdexcept>
#include <string>

namespace abm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two tensors (or a tensor and a layer) disagree on shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An index (layer, stride offset, channel, class) is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A request is well-formed but not allowed, e.g. backmapping the first conv layer.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (dataset records, config values).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numeric computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Binary file decoding failures. `kind()` distinguishes the causes so callers
/// can report them separately.
class FormatError : public Error {
 public:
  enum class Kind { bad_magic, version_mismatch, crc_mismatch, truncated, invalid, io };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace abm
