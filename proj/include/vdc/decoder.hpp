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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vdc/data.hpp"
#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

enum class ContextMode { kMean, kAttention };

inline std::string context_mode_name(ContextMode m) {
  return m == ContextMode::kMean ? "mean" : "attention";
}

inline ContextMode context_mode_from(const std::string& s) {
  if (s == "mean") return ContextMode::kMean;
  if (s == "attention") return ContextMode::kAttention;
  throw ConfigError("unknown context mode: " + s + " (expected mean or attention)");
}

/// Dimensions and switches of the caption decoder. `tanh_cell_output` selects
/// h_t = o_t * tanh(c_t); the default h_t = o_t * c_t is the tested contract.
struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_emb = 0;
  std::size_t d_h = 0;
  std::size_t d_v = 0;
  std::size_t d_a = 0;  // attention mode only
  std::size_t d_p = 0;
  ContextMode context = ContextMode::kAttention;
  bool tanh_cell_output = false;
  bool learned_init = false;
  double dropout = 0.0;  // rate on the output tanh layer during training

  void validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must cover the reserved tokens (>= 3)");
    if (d_emb == 0 || d_h == 0 || d_v == 0 || d_p == 0) {
      throw ConfigError("decoder dimensions d_emb, d_h, d_v, d_p must be positive");
    }
    if (context == ContextMode::kAttention && d_a == 0) {
      throw ConfigError("attention mode requires d_a > 0");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }
};

/// The attention-equipped LSTM decoder. All methods build nodes on a caller
/// supplied graph; parameters live in a ParamStore created by init_params and
/// are bound per graph.
template <class T>
class Decoder {
 public:
  using Id = typename Graph<T>::Id;

  explicit Decoder(DecoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const DecoderConfig& config() const { return cfg_; }

  // Creation order is fixed; it determines both the initialization stream
  // and the checkpoint layout. Mean-mode models carry no attention block.
  ParamStore<T> init_params(Rng& rng) const {
    ParamStore<T> ps;
    const auto mat = [&](const std::string& name, std::size_t rows, std::size_t cols) {
      Tensor<T> t({rows, cols});
      init_glorot(t, cols, rows, rng);
      ps.add(name, std::move(t));
    };
    const auto vec = [&](const std::string& name, std::size_t len) {
      ps.add(name, Tensor<T>::zeros({len}));
    };

    mat("E", cfg_.vocab_size, cfg_.d_emb);
    for (const char* g : {"o", "f", "i", "c"}) {
      const std::string s(g);
      mat("W_" + s, cfg_.d_h, cfg_.d_emb);
      mat("U_" + s, cfg_.d_h, cfg_.d_h);
      mat("A_" + s, cfg_.d_h, cfg_.d_v);
      vec("b_" + s, cfg_.d_h);
    }
    mat("W_p", cfg_.d_p, cfg_.d_h + cfg_.d_v + cfg_.d_emb);
    mat("U_p", cfg_.vocab_size, cfg_.d_p);
    vec("b_p", cfg_.d_p);
    vec("d", cfg_.vocab_size);
    if (cfg_.context == ContextMode::kAttention) {
      Tensor<T> w({cfg_.d_a});
      init_glorot(w, cfg_.d_a, 1, rng);
      ps.add("w", std::move(w));
      mat("W_a", cfg_.d_a, cfg_.d_h);
      mat("U_a", cfg_.d_a, cfg_.d_v);
      vec("b_a", cfg_.d_a);
    }
    if (cfg_.learned_init) {
      mat("W_hi", cfg_.d_h, cfg_.d_v);
      vec("b_hi", cfg_.d_h);
      mat("W_ci", cfg_.d_h, cfg_.d_v);
      vec("b_ci", cfg_.d_h);
    }
    return ps;
  }

  // e_i = w^T tanh(W_a h_prev + U_a v_i + b_a). The h_prev-dependent term is
  // one node reused across all rows of V.
  Id attention_scores(Graph<T>& g, const BoundParams<T>& p, Id features, Id h_prev) const {
    require_features(g, features);
    const Id q = g.add(g.matmul(p["W_a"], h_prev), p["b_a"]);       // d_a
    const Id proj = g.matmul(features, g.transpose(p["U_a"]));      // n x d_a
    const Id act = g.tanh_op(g.add_rowvec(proj, q));                // n x d_a
    return g.matmul(act, p["w"]);                                   // n
  }

  Id attention_weights(Graph<T>& g, Id scores) const { return g.softmax_sorted(scores); }

  Id context_attention(Graph<T>& g, Id features, Id alpha) const {
    require_features(g, features);
    return g.weighted_rowsum(features, alpha);
  }

  // Eq-by-construction equal to context_attention under uniform weights: the
  // same weighted sum with constant 1/n entries.
  Id context_mean(Graph<T>& g, Id features) const {
    require_features(g, features);
    const std::size_t n = g.value(features).shape[0];
    const T w = T(1) / static_cast<T>(n);
    return g.weighted_rowsum(features, g.constant(Tensor<T>::full({n}, w)));
  }

  struct StateIds {
    Id h;
    Id c;
  };

  StateIds initial_state(Graph<T>& g, const BoundParams<T>& p, Id features) const {
    if (!cfg_.learned_init) {
      const Id h0 = g.constant(Tensor<T>::zeros({cfg_.d_h}));
      const Id c0 = g.constant(Tensor<T>::zeros({cfg_.d_h}));
      return {h0, c0};
    }
    const Id mean = context_mean(g, features);
    const Id h0 = g.add(g.matmul(p["W_hi"], mean), p["b_hi"]);
    const Id c0 = g.add(g.matmul(p["W_ci"], mean), p["b_ci"]);
    return {h0, c0};
  }

  struct LstmOut {
    Id h;
    Id c;
    Id embedded;  // E[y_prev], shared with the output layer
  };

  // Gates o, f, i = sigmoid(W E[y_prev] + U h_prev + A phi + b), candidate
  // cell tanh of the same form; c_t = f*c_prev + i*candidate; h_t = o*c_t
  // as printed (tanh variant behind the config flag).
  LstmOut lstm_step(Graph<T>& g, const BoundParams<T>& p, std::size_t y_prev, Id h_prev, Id c_prev,
                    Id phi) const {
    if (y_prev >= cfg_.vocab_size) {
      throw IndexError("token index " + std::to_string(y_prev) + " out of vocabulary [0, " +
                       std::to_string(cfg_.vocab_size) + ")");
    }
    const Id ey = g.embed_lookup(p["E"], y_prev);
    const auto gate_pre = [&](const std::string& s) {
      return g.add_n({g.matmul(p["W_" + s], ey), g.matmul(p["U_" + s], h_prev),
                      g.matmul(p["A_" + s], phi), p["b_" + s]});
    };
    const Id o = g.sigmoid(gate_pre("o"));
    const Id f = g.sigmoid(gate_pre("f"));
    const Id i = g.sigmoid(gate_pre("i"));
    const Id cand = g.tanh_op(gate_pre("c"));
    const Id c = g.add(g.mul(f, c_prev), g.mul(i, cand));
    const Id h = cfg_.tanh_cell_output ? g.mul(o, g.tanh_op(c)) : g.mul(o, c);
    return {h, c, ey};
  }

  // softmax(U_p tanh(W_p [h, phi, E[y_prev]] + b_p) + d). `dropout_mask`
  // (optional) multiplies the tanh layer; masks are graph constants supplied
  // by the trainer.
  Id word_logits(Graph<T>& g, const BoundParams<T>& p, Id h, Id phi, Id embedded,
                 Id dropout_mask = -1) const {
    const Id cat = g.concat({h, phi, embedded}, 0);
    Id z = g.tanh_op(g.add(g.matmul(p["W_p"], cat), p["b_p"]));
    if (dropout_mask >= 0) z = g.mul(z, dropout_mask);
    return g.add(g.matmul(p["U_p"], z), p["d"]);
  }

  Id word_distribution(Graph<T>& g, const BoundParams<T>& p, Id h, Id phi, Id embedded,
                       Id dropout_mask = -1) const {
    return g.softmax_rows(word_logits(g, p, h, phi, embedded, dropout_mask));
  }

  struct StepOut {
    Id dist;    // p(y_t | y_<t, V)
    Id logits;  // pre-softmax scores (training losses read these)
    Id h;
    Id c;
    Id alpha;   // -1 in mean mode
  };

  // One decode step: context from h_prev (attention) or the fixed mean, the
  // LSTM recurrence, then the word distribution.
  StepOut step(Graph<T>& g, const BoundParams<T>& p, Id features, std::size_t y_prev, Id h_prev,
               Id c_prev, Id dropout_mask = -1) const {
    Id alpha = -1;
    Id phi;
    if (cfg_.context == ContextMode::kAttention) {
      alpha = attention_weights(g, attention_scores(g, p, features, h_prev));
      phi = context_attention(g, features, alpha);
    } else {
      phi = context_mean(g, features);
    }
    const LstmOut lstm = lstm_step(g, p, y_prev, h_prev, c_prev, phi);
    const Id logits = word_logits(g, p, lstm.h, phi, lstm.embedded, dropout_mask);
    return {g.softmax_rows(logits), logits, lstm.h, lstm.c, alpha};
  }

  // Teacher-forced negative log-likelihood of one encoded caption (a
  // sequence ending in <eos>). y_0 is the null-word embedding row (<pad>).
  // Returns the sum over steps; callers divide by target.size() for
  // per-token values. `dropout_rng` non-null enables output-layer dropout
  // with one fresh mask per step.
  Id caption_loss(Graph<T>& g, const BoundParams<T>& p, Id features,
                  const std::vector<std::size_t>& target, Rng* dropout_rng = nullptr) const {
    if (target.empty()) throw ContractError("caption_loss on empty target sequence");
    StateIds state = initial_state(g, p, features);
    std::size_t y_prev = Vocab::kPad;
    std::vector<Id> losses;
    losses.reserve(target.size());
    for (std::size_t t = 0; t < target.size(); ++t) {
      Id mask = -1;
      if (dropout_rng != nullptr && cfg_.dropout > 0.0) {
        mask = g.constant(make_dropout_mask(*dropout_rng));
      }
      const StepOut out = step(g, p, features, y_prev, state.h, state.c, mask);
      losses.push_back(g.nll_logits(out.logits, target[t]));
      state = {out.h, out.c};
      y_prev = target[t];
    }
    return losses.size() == 1 ? losses[0] : g.add_n(losses);
  }

  // Inverted dropout: kept units scale by 1/(1-rate) so evaluation needs no
  // rescaling.
  Tensor<T> make_dropout_mask(Rng& rng) const {
    Tensor<T> mask({cfg_.d_p});
    const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.uniform() < cfg_.dropout ? T(0) : keep_scale;
    }
    return mask;
  }

 private:
  DecoderConfig cfg_;

  void require_features(Graph<T>& g, Id features) const {
    const Tensor<T>& v = g.value(features);
    if (v.rank() != 2 || v.shape[1] != cfg_.d_v) {
      throw DimensionError("feature set " + shape_str(v.shape) + " does not match d_v " +
                           std::to_string(cfg_.d_v));
    }
  }
};

}  // namespace vdc
