#pragma once

#include <stdexcept>
#include <string>

namespace rpg {

/// Tensor or layer dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated file, bad magic, unsupported version.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced, training diverged (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented invariant was violated at runtime.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The query channel refused an account that the detector has banned.
class BlockedAccountError : public std::runtime_error {
 public:
  explicit BlockedAccountError(int account)
      : std::runtime_error("account " + std::to_string(account) + " is blocked"), account_(account) {}
  int account() const noexcept { return account_; }

 private:
  int account_;
};

/// Every attacker account has been banned.
class AccountsExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rpg
