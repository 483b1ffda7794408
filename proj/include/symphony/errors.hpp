#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace symphony {

/// Malformed Standard MIDI File; carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// A fixed-size container (bar track slots, token window) overflowed.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor, window or skeleton dimensions do not agree.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A metric is not defined for the given input (e.g. empty score).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The remote embedding service failed or returned garbage.
class RewardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace symphony
