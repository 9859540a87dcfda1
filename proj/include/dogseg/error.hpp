// Copyright 2026 The dogseg Authors
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

#ifndef DOGSEG__ERROR_HPP_
#define DOGSEG__ERROR_HPP_

#include <stdexcept>
#include <string>

namespace dogseg
{

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Bayes update with no usable evidence (vanishing denominator).
class DegenerateEvidenceError : public Error
{
public:
  using Error::Error;
};

class EmptyCellError : public Error
{
public:
  using Error::Error;
};

// Raster or tensor dimensions disagree.
class ShapeError : public Error
{
public:
  using Error::Error;
};

// Network graph cannot be built (non-integral edges, bad wiring, incompatible prefix).
class ArchError : public Error
{
public:
  using Error::Error;
};

// Malformed input data (labels out of range, corrupt files).
class DataError : public Error
{
public:
  using Error::Error;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class BoundsError : public Error
{
public:
  using Error::Error;
};

class NotFoundError : public Error
{
public:
  using Error::Error;
};

class ConflictError : public Error
{
public:
  using Error::Error;
};

class TrainingDivergedError : public Error
{
public:
  using Error::Error;
};

}  // namespace dogseg

#endif  // DOGSEG__ERROR_HPP_
