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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vdc/errors.hpp"

namespace vdc {

/// mt19937_64 wrapped with hand-rolled variate transforms. std::*_distribution
/// output is implementation-defined, so all transforms here are spelled out to
/// keep streams identical across standard libraries. State round-trips through
/// text, which checkpoints embed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the paired variate is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <class V>
  void shuffle(std::vector<V>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Textual engine state. The mt19937_64 stream representation is specified
  // by the standard, so this is portable. The Box-Muller spare is appended
  // as its IEEE-754 bit pattern so a restored generator continues the exact
  // variate stream.
  std::string state_text() const {
    std::ostringstream os;
    os << gen_ << " | " << (have_spare_ ? 1 : 0);
    if (have_spare_) {
      std::uint64_t bits;
      std::memcpy(&bits, &spare_, sizeof(bits));
      os << " " << bits;
    }
    return os.str();
  }

  void set_state_text(const std::string& text) {
    const std::size_t bar = text.rfind(" | ");
    if (bar == std::string::npos) throw FormatError("malformed RNG state text");
    std::istringstream is(text.substr(0, bar));
    is >> gen_;
    if (is.fail()) throw FormatError("malformed RNG engine state");
    std::istringstream tail(text.substr(bar + 3));
    int flag = 0;
    tail >> flag;
    if (tail.fail()) throw FormatError("malformed RNG state flags");
    have_spare_ = flag != 0;
    if (have_spare_) {
      std::uint64_t bits = 0;
      tail >> bits;
      if (tail.fail()) throw FormatError("malformed RNG spare value");
      std::memcpy(&spare_, &bits, sizeof(bits));
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vdc
