// Copyright 2026 The cafesim Authors. All Rights Reserved.
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
// =============================================================================
#ifndef CAFESIM_ERRORS_HPP_
#define CAFESIM_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cafesim {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CAFESIM_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

CAFESIM_DEFINE_ERROR(DimensionError);
CAFESIM_DEFINE_ERROR(SymmetryError);
CAFESIM_DEFINE_ERROR(SpecError);
CAFESIM_DEFINE_ERROR(CorruptPayload);
CAFESIM_DEFINE_ERROR(RangeError);
CAFESIM_DEFINE_ERROR(PartitionError);
CAFESIM_DEFINE_ERROR(SingularError);
CAFESIM_DEFINE_ERROR(ConfigError);
CAFESIM_DEFINE_ERROR(ValidationError);
CAFESIM_DEFINE_ERROR(PreconditionError);
CAFESIM_DEFINE_ERROR(DegenerateInput);

#undef CAFESIM_DEFINE_ERROR

/// Raised when an iterate, update, or objective value stops being finite.
/// Carries the round in which it happened (or -1 outside the round loop).
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, long round = -1)
      : Error(what), round_(round) {}
  long round() const { return round_; }

 private:
  long round_;
};

/// Malformed input text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cafesim

#endif  // CAFESIM_ERRORS_HPP_
