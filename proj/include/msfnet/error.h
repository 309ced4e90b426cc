// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_ERROR_H_
#define MSFNET_ERROR_H_

#include <stdexcept>
#include <string>

namespace msf {

/// Raised for incompatible tensor shapes or impossible layer geometry.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed inputs read from disk or supplied by the user.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a value stops being finite or a numeric check is breached.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msf

#endif  // MSFNET_ERROR_H_
