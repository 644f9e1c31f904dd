// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace zssl {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Tensor extents do not line up (e.g. matmul inner dimensions disagree).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed numeric preconditions, rejected optimizer steps.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: broken preconditions that are not shape- or value-related.
class ContractError : public Error {
 public:
  using Error::Error;
};

// File could not be opened / read / written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string &msg, int64_t line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}

  int64_t line() const { return line_; }

 private:
  int64_t line_;
};

// Bad configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace zssl
