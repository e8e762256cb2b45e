// Data-level error shared by the loaders and the training code.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sorec {

/// Problem with input data (as opposed to a usage error). `line()` is 1-based,
/// 0 when not tied to a manifest line.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace sorec
