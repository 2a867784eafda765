/* Copyright 2026 The crossreid Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace crossreid {

// Base of every error raised by the library. The CLI maps ConfigError and
// ParseError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CROSSREID_DEFINE_ERROR(Name)            \
  class Name : public Error {                   \
   public:                                      \
    using Error::Error;                         \
  }

CROSSREID_DEFINE_ERROR(DimensionError);
CROSSREID_DEFINE_ERROR(NumericError);
CROSSREID_DEFINE_ERROR(SamplingError);
CROSSREID_DEFINE_ERROR(LabelError);
CROSSREID_DEFINE_ERROR(StageError);
CROSSREID_DEFINE_ERROR(ConfigError);
CROSSREID_DEFINE_ERROR(DegenerateError);
CROSSREID_DEFINE_ERROR(StateError);
CROSSREID_DEFINE_ERROR(IoError);

#undef CROSSREID_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  explicit ParseError(const std::string& what) : ParseError(what, 0) {}

  // 1-based line number of the offending input, 0 when not line-oriented.
  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace crossreid
