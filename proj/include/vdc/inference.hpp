// Copyright 2026 The VDC Authors
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vdc/data.hpp"
#include "vdc/decoder.hpp"
#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

// One caption candidate. `log_prob` is the accumulated sum of log p(y_t)
// over emitted tokens under the model; `alphas` keeps the attention row
// used at each step (empty for mean-context models). A hypothesis is
// finished once it has emitted <eos>.
template <class T>
struct Hypothesis {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  std::vector<Tensor<T>> alphas;

  bool finished() const { return !tokens.empty() && tokens.back() == Vocab::kEos; }
};

template <class T>
struct BeamResult {
  Hypothesis<T> best;
  // Final beam ordered by (score descending, token sequence ascending).
  std::vector<Hypothesis<T>> beam;
};

namespace detail {

// All steps of one decode share a graph so parameters are bound once.
// Values read from the graph are copied immediately: node storage may
// reallocate on later pushes.
template <class T>
class DecodeSession {
 public:
  using Id = typename Graph<T>::Id;

  DecodeSession(const Decoder<T>& dec, const ParamStore<T>& params, const Tensor<T>& features)
      : dec_(&dec), bound_(g_, params), features_(g_.constant(features)) {}

  typename Decoder<T>::StateIds initial() { return dec_->initial_state(g_, bound_, features_); }

  struct Step {
    Tensor<T> dist;   // word distribution, copied out
    Tensor<T> alpha;  // empty in mean mode
    Id h;
    Id c;
  };

  Step eval(std::size_t y_prev, Id h_prev, Id c_prev) {
    const auto out = dec_->step(g_, bound_, features_, y_prev, h_prev, c_prev);
    Step s;
    s.dist = g_.value(out.dist);
    if (out.alpha >= 0) s.alpha = g_.value(out.alpha);
    s.h = out.h;
    s.c = out.c;
    return s;
  }

 private:
  Graph<T> g_;
  const Decoder<T>* dec_;
  BoundParams<T> bound_;
  Id features_;
};

inline void check_decode_args(std::size_t max_len) {
  if (max_len == 0) throw ContractError("decoding needs max_len >= 1");
}

}  // namespace detail

// Deterministic argmax decode. Exact probability ties resolve to the
// lowest token index. Stops after <eos> or max_len tokens.
template <class T>
Hypothesis<T> greedy_decode(const Decoder<T>& dec, const ParamStore<T>& params,
                            const Tensor<T>& features, std::size_t max_len) {
  detail::check_decode_args(max_len);
  detail::DecodeSession<T> session(dec, params, features);
  auto state = session.initial();
  std::size_t y_prev = Vocab::kPad;
  Hypothesis<T> hyp;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto step = session.eval(y_prev, state.h, state.c);
    std::size_t pick = 0;
    for (std::size_t j = 1; j < step.dist.size(); ++j) {
      if (step.dist[j] > step.dist[pick]) pick = j;
    }
    hyp.tokens.push_back(pick);
    hyp.log_prob += std::log(static_cast<double>(step.dist[pick]));
    if (step.alpha.size() != 0) hyp.alphas.push_back(step.alpha);
    if (pick == Vocab::kEos) break;
    state = {step.h, step.c};
    y_prev = pick;
  }
  return hyp;
}

// Multinomial decode from p^(1/temperature), renormalized per step. The
// weights are formed relative to the row maximum so extreme temperatures
// stay finite; as temperature approaches zero this reduces to greedy.
// The accumulated score still sums the untempered log-probabilities.
template <class T>
Hypothesis<T> sample_decode(const Decoder<T>& dec, const ParamStore<T>& params,
                            const Tensor<T>& features, std::size_t max_len, double temperature,
                            Rng& rng) {
  detail::check_decode_args(max_len);
  if (!(temperature > 0.0)) throw ContractError("sampling temperature must be positive");
  detail::DecodeSession<T> session(dec, params, features);
  auto state = session.initial();
  std::size_t y_prev = Vocab::kPad;
  Hypothesis<T> hyp;
  std::vector<double> weights;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto step = session.eval(y_prev, state.h, state.c);
    const std::size_t n = step.dist.size();
    double top = 0.0;
    for (std::size_t j = 0; j < n; ++j) top = std::max(top, static_cast<double>(step.dist[j]));
    const double log_top = std::log(top);
    weights.assign(n, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = static_cast<double>(step.dist[j]);
      if (p > 0.0) weights[j] = std::exp((std::log(p) - log_top) / temperature);
      total += weights[j];
    }
    const double r = rng.uniform() * total;
    std::size_t pick = n;
    std::size_t last_positive = 0;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (weights[j] <= 0.0) continue;
      last_positive = j;
      acc += weights[j];
      if (r < acc) {
        pick = j;
        break;
      }
    }
    if (pick == n) pick = last_positive;  // rounding dust at the top of the CDF
    hyp.tokens.push_back(pick);
    hyp.log_prob += std::log(static_cast<double>(step.dist[pick]));
    if (step.alpha.size() != 0) hyp.alphas.push_back(step.alpha);
    if (pick == Vocab::kEos) break;
    state = {step.h, step.c};
    y_prev = pick;
  }
  return hyp;
}

// Beam search over accumulated log-probability. Finished hypotheses are
// frozen but keep competing, both for beam slots and at final selection;
// the answer is the best-scoring hypothesis in the final beam, whether it
// finished or ran to max_len. Scores carry no length penalty unless
// `length_normalize` divides the selection score by token count.
template <class T>
BeamResult<T> beam_search(const Decoder<T>& dec, const ParamStore<T>& params,
                          const Tensor<T>& features, std::size_t beam_width, std::size_t max_len,
                          bool length_normalize = false) {
  detail::check_decode_args(max_len);
  if (beam_width == 0) throw ContractError("beam width must be >= 1");
  detail::DecodeSession<T> session(dec, params, features);
  const auto init = session.initial();

  using Id = typename Graph<T>::Id;
  struct Cand {
    Hypothesis<T> hyp;
    Id h;
    Id c;
  };
  // Distinct candidates always differ in token sequence, so this order is
  // strict and the sort deterministic.
  const auto before = [](const Cand& a, const Cand& b) {
    if (a.hyp.log_prob != b.hyp.log_prob) return a.hyp.log_prob > b.hyp.log_prob;
    return a.hyp.tokens < b.hyp.tokens;
  };

  std::vector<Cand> beam;
  beam.push_back({Hypothesis<T>{}, init.h, init.c});
  for (std::size_t t = 0; t < max_len; ++t) {
    bool any_open = false;
    for (const Cand& cand : beam) {
      if (!cand.hyp.finished()) any_open = true;
    }
    if (!any_open) break;
    std::vector<Cand> pool;
    for (Cand& cand : beam) {
      if (cand.hyp.finished()) {
        pool.push_back(std::move(cand));
        continue;
      }
      const std::size_t y_prev = cand.hyp.tokens.empty() ? Vocab::kPad : cand.hyp.tokens.back();
      const auto step = session.eval(y_prev, cand.h, cand.c);
      for (std::size_t j = 0; j < step.dist.size(); ++j) {
        Cand next;
        next.hyp = cand.hyp;
        next.hyp.tokens.push_back(j);
        next.hyp.log_prob += std::log(static_cast<double>(step.dist[j]));
        if (step.alpha.size() != 0) next.hyp.alphas.push_back(step.alpha);
        next.h = step.h;
        next.c = step.c;
        pool.push_back(std::move(next));
      }
    }
    std::sort(pool.begin(), pool.end(), before);
    if (pool.size() > beam_width) pool.resize(beam_width);
    beam = std::move(pool);
  }

  BeamResult<T> result;
  result.beam.reserve(beam.size());
  for (Cand& cand : beam) result.beam.push_back(std::move(cand.hyp));
  const auto score = [&](const Hypothesis<T>& h) {
    if (length_normalize && !h.tokens.empty()) {
      return h.log_prob / static_cast<double>(h.tokens.size());
    }
    return h.log_prob;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.beam.size(); ++i) {
    if (score(result.beam[i]) > score(result.beam[best])) best = i;
  }
  result.best = result.beam[best];
  return result;
}

// Attention weights of a forced decode: row t holds the weights used
// while emitting tokens[t]. Only defined for attention-context models.
template <class T>
Tensor<T> capture_attention(const Decoder<T>& dec, const ParamStore<T>& params,
                            const Tensor<T>& features, const std::vector<std::size_t>& tokens) {
  if (dec.config().context != ContextMode::kAttention) {
    throw ModeError("attention capture requires an attention-context model");
  }
  if (tokens.empty()) throw ContractError("attention capture needs a nonempty token sequence");
  if (features.rank() != 2) {
    throw DimensionError("attention capture expects a rank-2 feature set, got " +
                         shape_str(features.shape));
  }
  detail::DecodeSession<T> session(dec, params, features);
  auto state = session.initial();
  const std::size_t n = features.shape[0];
  Tensor<T> rows({tokens.size(), n});
  std::size_t y_prev = Vocab::kPad;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto step = session.eval(y_prev, state.h, state.c);
    for (std::size_t i = 0; i < n; ++i) rows[t * n + i] = step.alpha[i];
    state = {step.h, step.c};
    y_prev = tokens[t];
  }
  return rows;
}

namespace detail {

// Rounds a probability row to integer micro-units (1e-6) that sum to
// exactly one: floor first, then hand the missing units to the largest
// fractional remainders. Keeps dumped rows verifiable at 6 decimals.
inline std::vector<std::int64_t> micro_units(const std::vector<double>& vals) {
  const std::int64_t target = 1000000;
  const std::size_t n = vals.size();
  std::vector<std::int64_t> units(n, 0);
  std::vector<std::pair<double, std::size_t>> remainder(n);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = std::max(0.0, vals[i]) * 1e6;
    units[i] = static_cast<std::int64_t>(std::floor(scaled));
    remainder[i] = {scaled - static_cast<double>(units[i]), i};
    total += units[i];
  }
  std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::size_t k = 0;
  while (total < target && n != 0) {
    units[remainder[k % n].second] += 1;
    total += 1;
    ++k;
  }
  k = 0;
  while (total > target && n != 0) {
    const std::size_t i = remainder[n - 1 - (k % n)].second;
    if (units[i] > 0) {
      units[i] -= 1;
      total -= 1;
    }
    ++k;
  }
  return units;
}

inline std::string six_dp(std::int64_t units) {
  std::string frac = std::to_string(units % 1000000);
  return std::to_string(units / 1000000) + "." + std::string(6 - frac.size(), '0') + frac;
}

}  // namespace detail

// CSV dump of a capture_attention matrix: header `token,slot_1..slot_n`,
// one row per generated token, six decimal places per weight. Each row's
// printed values sum to exactly 1.000000.
template <class T>
std::string attention_csv(const Vocab& vocab, const std::vector<std::size_t>& tokens,
                          const Tensor<T>& alpha) {
  if (alpha.rank() != 2 || alpha.shape[0] != tokens.size()) {
    throw DimensionError("attention matrix " + shape_str(alpha.shape) + " does not cover " +
                         std::to_string(tokens.size()) + " tokens");
  }
  const std::size_t n = alpha.shape[1];
  std::string out = "token";
  for (std::size_t i = 1; i <= n; ++i) out += ",slot_" + std::to_string(i);
  out += "\n";
  std::vector<double> row(n);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<double>(alpha[t * n + i]);
    const auto units = detail::micro_units(row);
    out += vocab.token(tokens[t]);
    for (std::size_t i = 0; i < n; ++i) out += "," + detail::six_dp(units[i]);
    out += "\n";
  }
  return out;
}

// Terminal rendering of the same matrix: one block per token, one bar
// line per slot, one '#' per 0.05 of attention weight.
template <class T>
std::string attention_bars(const Vocab& vocab, const std::vector<std::size_t>& tokens,
                           const Tensor<T>& alpha) {
  if (alpha.rank() != 2 || alpha.shape[0] != tokens.size()) {
    throw DimensionError("attention matrix " + shape_str(alpha.shape) + " does not cover " +
                         std::to_string(tokens.size()) + " tokens");
  }
  const std::size_t n = alpha.shape[1];
  std::string out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out += vocab.token(tokens[t]) + "\n";
    for (std::size_t i = 0; i < n; ++i) {
      const double a = static_cast<double>(alpha[t * n + i]);
      const long bars = std::lround(std::max(0.0, a) / 0.05);
      out += "  slot_" + std::to_string(i + 1) + " |" + std::string(static_cast<std::size_t>(bars), '#') +
             "\n";
    }
  }
  return out;
}

}  // namespace vdc
