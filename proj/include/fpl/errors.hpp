#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fpl {

/// Invalid shapes, unknown layer ids, inconsistent paradigm settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Values that violate a data contract (e.g. a label outside [0, C)).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, such as stepping an optimizer without a gradient.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Arguments outside a function's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed dataset files. Carries the byte offset where parsing failed.
class IngestionError : public std::runtime_error {
 public:
  enum class Kind { kOpen, kWrongMagic, kTruncated, kDimensionMismatch };

  IngestionError(Kind kind, std::uint64_t offset, const std::string& what)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

}  // namespace fpl
