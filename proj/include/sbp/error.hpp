#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sbp {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor operands disagree on a dimension.
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, const std::string& what)
      : Error("shape mismatch in " + dimension + ": " + what), dimension_(std::move(dimension)) {}

  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string dimension_;
};

// Invalid static configuration (channel divisibility, odd widths, level counts).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Line and column are 1-based; column 0 means "whole line".
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t column, const std::string& msg)
      : Error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
        source_(std::move(source)),
        line_(line),
        column_(column) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::string source_;
  std::size_t line_;
  std::size_t column_;
};

// A graph node needs weights that the store does not hold, or holds with the wrong length.
class WeightError : public Error {
 public:
  WeightError(int node_id, const std::string& msg)
      : Error("node " + std::to_string(node_id) + ": " + msg), node_id_(node_id) {}

  int node_id() const noexcept { return node_id_; }

 private:
  int node_id_;
};

// An API was called out of order (e.g. analyzing a graph before shape inference).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sbp
