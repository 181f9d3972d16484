#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sefcn {

// Shape contract violated (extent mismatch, wrong rank, odd pooling extent).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed .tns / checkpoint payload. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Invalid configuration value or unknown option.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Max-unpooling switch that points outside its 2x2 window.
class CorruptIndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad data handed to an operation (empty dataset, no labelled pixels, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem failures: missing or unwritable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sefcn
