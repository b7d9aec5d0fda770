// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace siaf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree, or a shape violates a type invariant.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Multi-index outside the tensor bounds.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Integer result does not fit the 32-bit accumulator.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// SRAM access past the end of a bank.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Model or accelerator configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the source name and the byte offset (or
/// line number for text files) of the first bad field.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::uint64_t offset, const std::string& what)
      : Error(source + ":" + std::to_string(offset) + ": " + what),
        source_(std::move(source)),
        offset_(offset),
        message_(what) {}

  const std::string& source() const noexcept { return source_; }
  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string source_;
  std::uint64_t offset_;
  std::string message_;
};

}  // namespace siaf
