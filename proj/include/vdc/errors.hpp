/* vdc - video description with temporal attention.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
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

namespace vdc {

// Error taxonomy. The CLI maps these onto process exit codes, so new
// failure modes should reuse one of the existing categories.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes / extents.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range token or element index.
struct IndexError : Error {
  using Error::Error;
};

// A caller violated an operation's precondition.
struct ContractError : Error {
  using Error::Error;
};

// NaN/Inf or another numeric breakdown.
struct NumericError : Error {
  using Error::Error;
};

// Malformed file content (bad magic, truncation, ...).
struct FormatError : Error {
  using Error::Error;
};

// Operation requested in a model mode that does not support it.
struct ModeError : Error {
  using Error::Error;
};

// Bad configuration key or value.
struct ConfigError : Error {
  using Error::Error;
};

// Dataset-level inconsistency (missing files, stream misalignment, ...).
struct DataError : Error {
  using Error::Error;
};

}  // namespace vdc
