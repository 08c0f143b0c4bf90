#pragma once

#include <stdexcept>
#include <string>

namespace mest {

// Bad arguments or configuration. The CLI maps this to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// Singular matrices, non-contracting recursions, overflow. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite input to a pointwise function.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

}  // namespace mest
