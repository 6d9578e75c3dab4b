#pragma once

#include <stdexcept>
#include <string>

namespace ff {

// Shapes that do not compose (matmul inner dims, kernel larger than input...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation's precondition.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data: dataset files, checkpoints, CSV.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss or activation left the finite range during training.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ff
