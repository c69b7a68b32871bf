// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPKV_ERRORS_H_
#define SPKV_ERRORS_H_

#include <stdexcept>
#include <string>

namespace spkv {

// All toolkit failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };

// Raised when an utterance has no voiced frames; callers usually skip it.
class EmptyFeaturesError : public Error { using Error::Error; };

}  // namespace spkv

#endif  // SPKV_ERRORS_H_
