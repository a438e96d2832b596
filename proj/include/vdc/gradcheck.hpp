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
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/rng.hpp"

namespace vdc {

struct GradCheckOptions {
  double eps = 1e-5;
  double floor = 1e-8;         // relative-error denominator floor
  std::size_t max_coords = 0;  // 0 = every coordinate
  std::uint64_t seed = 0x7dc0ffee;
  // Evaluate the finite differences in long double. The loss itself is
  // computed to ~1e-16 relative accuracy in double; dividing its rounding
  // noise by 2*eps leaves ~1e-11 absolute noise on the numeric gradient,
  // which drowns true gradients below ~1e-6. Extended precision pushes that
  // floor three orders of magnitude down. Requires a build functor generic
  // over the graph scalar type.
  bool high_precision = false;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  struct PerParam {
    std::string name;
    double max_rel_err;
    std::size_t checked;
  };
  std::vector<PerParam> per_param;
};

/// Central-difference gradient check. `build` must be a pure function of the
/// parameter store: it constructs a fresh graph and returns a scalar loss
/// node. The analytic gradient is taken from one backward pass; each probed
/// coordinate is then verified with (f(x+e) - f(x-e)) / (x_plus - x_minus),
/// where the denominator is the exactly-representable spacing actually used.
template <class T, class BuildFn>
GradCheckReport grad_check(ParamStore<T>& params, BuildFn&& build,
                           const GradCheckOptions& opts = {}) {
  constexpr bool kSupportsHp =
      std::is_invocable_v<BuildFn&, Graph<long double>&, const BoundParams<long double>&>;
  if (opts.high_precision && !kSupportsHp) {
    throw ContractError("grad_check: high_precision requires a build functor generic over the "
                        "graph scalar type");
  }

  ParamStore<T> analytic = ParamStore<T>::zeros_like(params);
  {
    Graph<T> g;
    BoundParams<T> bp(g, params);
    const auto loss = build(g, bp);
    g.backward(loss);
    bp.accumulate_grads(analytic);
  }

  const auto eval = [&]() -> long double {
    if constexpr (kSupportsHp) {
      if (opts.high_precision) {
        ParamStore<long double> hp = ParamStore<long double>::cast_from(params);
        Graph<long double> g;
        BoundParams<long double> bp(g, hp);
        const auto loss = build(g, bp);
        return g.value(loss)[0];
      }
    }
    Graph<T> g;
    BoundParams<T> bp(g, params);
    const auto loss = build(g, bp);
    return static_cast<long double>(g.value(loss)[0]);
  };

  const std::size_t total = params.scalar_count();
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (entry, offset)
  if (opts.max_coords == 0 || opts.max_coords >= total) {
    coords.reserve(total);
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t j = 0; j < params.entry(p).value.size(); ++j) coords.emplace_back(p, j);
  } else {
    Rng rng(opts.seed);
    std::unordered_set<std::size_t> chosen;
    while (chosen.size() < opts.max_coords) chosen.insert(static_cast<std::size_t>(rng.below(total)));
    std::vector<std::size_t> flat(chosen.begin(), chosen.end());
    std::sort(flat.begin(), flat.end());
    std::size_t p = 0, base = 0;
    for (std::size_t f : flat) {
      while (f - base >= params.entry(p).value.size()) {
        base += params.entry(p).value.size();
        ++p;
      }
      coords.emplace_back(p, f - base);
    }
  }

  GradCheckReport report;
  report.per_param.reserve(params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    report.per_param.push_back({params.entry(p).name, 0.0, 0});

  for (const auto& [p, j] : coords) {
    Tensor<T>& value = params.entry(p).value;
    const T orig = value[j];
    const T plus = orig + static_cast<T>(opts.eps);
    const T minus = orig - static_cast<T>(opts.eps);
    value[j] = plus;
    const long double f_plus = eval();
    value[j] = minus;
    const long double f_minus = eval();
    value[j] = orig;

    const long double spacing = static_cast<long double>(plus) - static_cast<long double>(minus);
    const double numeric = static_cast<double>((f_plus - f_minus) / spacing);
    const double a = static_cast<double>(analytic.entry(p).value[j]);
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
    const double rel = std::abs(a - numeric) / denom;

    ++report.checked;
    ++report.per_param[p].checked;
    report.per_param[p].max_rel_err = std::max(report.per_param[p].max_rel_err, rel);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params.entry(p).name;
      report.worst_coord = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace vdc
