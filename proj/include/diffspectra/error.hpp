//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_ERROR_HPP_
#define DIFFSPECTRA_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace diffspectra {

// Malformed or inconsistent configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad input data (schema violations, unknown elements, empty files).
// CLI exit code 3.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape mismatches and non-finite values inside the numerical engine.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace diffspectra

#endif // DIFFSPECTRA_ERROR_HPP_
