// Copyright 2026 The stitchgrid Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STITCHGRID_ERROR_HPP_
#define STITCHGRID_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace stitchgrid {

// Base of every error the library throws. `kind()` is the short
// machine-readable class the CLI prints.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept = 0;
  virtual int exit_code() const noexcept = 0;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid-input"; }
  int exit_code() const noexcept override { return 2; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
  int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
  int exit_code() const noexcept override { return 3; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
  int exit_code() const noexcept override { return 4; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "checkpoint"; }
  int exit_code() const noexcept override { return 5; }
};

}  // namespace stitchgrid

#endif  // STITCHGRID_ERROR_HPP_
