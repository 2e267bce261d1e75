/* Copyright 2026 The epk Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace epk {

/// Base class for all library errors. Each subclass maps onto a CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid model/experiment configuration or mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Invalid argument values (bad labels, out-of-range indices, t outside [0,1]).
class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Kernel-machine reduction was requested but the sample coefficients vary over training.
class ReductionRefused : public InputError {
 public:
  using InputError::InputError;
};

/// Divergence, singular systems, non-finite kernel values.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Malformed trajectory, IDX or CSV content.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace epk
