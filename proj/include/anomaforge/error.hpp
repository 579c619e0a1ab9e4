#pragma once

#include <stdexcept>
#include <string>

namespace anomaforge {

// Failure classes that the command-line front end maps onto exit codes.

/// Invalid configuration value or key (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent data on disk (exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or diverging optimisation (exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace anomaforge
