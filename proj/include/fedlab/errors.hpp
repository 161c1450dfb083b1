#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedlab {

// Invalid run configuration (bad hyperparameters, malformed config file, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated an API precondition (layout mismatch, empty input, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed data file; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss or parameter. Carries the last finite
// parameter vector so callers can inspect or resume.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(const std::string& what, std::vector<double> last_finite)
      : std::runtime_error(what), last_finite_(std::move(last_finite)) {}

  const std::vector<double>& last_finite_values() const { return last_finite_; }

 private:
  std::vector<double> last_finite_;
};

}  // namespace fedlab
