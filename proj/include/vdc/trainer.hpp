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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "vdc/config.hpp"
#include "vdc/data.hpp"
#include "vdc/decoder.hpp"
#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

/// Everything that defines a caption-model training run. The text round trip
/// (to_text/from_text) is the config file format and also what checkpoints
/// embed, so every field must serialize exactly.
struct TrainConfig {
  ContextMode context = ContextMode::kAttention;
  bool use_motion = false;
  std::size_t d_emb = 64;
  std::size_t d_h = 128;
  std::size_t d_a = 64;
  std::size_t d_p = 128;
  bool use_dropout = false;
  bool tanh_cell_output = false;
  bool learned_init = false;
  std::size_t batch_size = 48;
  std::uint64_t patience_updates = 5000;
  std::uint64_t max_updates = 10000;
  std::uint64_t eval_every = 100;
  std::uint64_t seed = 1;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  // Stagnation has no standard numeric definition; this pair makes the one
  // used here an explicit, overridable setting: no improvement greater than
  // stagnation_delta over stagnation_checks consecutive validation checks.
  double stagnation_delta = 1e-4;
  std::uint64_t stagnation_checks = 5;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (d_emb == 0 || d_h == 0 || d_p == 0) {
      throw ConfigError("model dimensions d_emb, d_h, d_p must be positive");
    }
    if (context == ContextMode::kAttention && d_a == 0) {
      throw ConfigError("attention context requires d_a > 0");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
    if (max_updates == 0) throw ConfigError("max_updates must be >= 1");
    if (adadelta_rho < 0.0 || adadelta_rho >= 1.0) throw ConfigError("adadelta_rho must be in [0, 1)");
    if (adadelta_eps <= 0.0) throw ConfigError("adadelta_eps must be positive");
    if (stagnation_delta < 0.0) throw ConfigError("stagnation_delta must be nonnegative");
    if (stagnation_checks == 0) throw ConfigError("stagnation_checks must be >= 1");
  }

  void apply(const std::string& key, const std::string& value) {
    if (key == "context") {
      context = context_mode_from(value);
    } else if (key == "motion") {
      use_motion = parse_flag_value(key, value);
    } else if (key == "d_emb") {
      d_emb = static_cast<std::size_t>(parse_u64_value(key, value));
    } else if (key == "d_h") {
      d_h = static_cast<std::size_t>(parse_u64_value(key, value));
    } else if (key == "d_a") {
      d_a = static_cast<std::size_t>(parse_u64_value(key, value));
    } else if (key == "d_p") {
      d_p = static_cast<std::size_t>(parse_u64_value(key, value));
    } else if (key == "dropout") {
      use_dropout = parse_flag_value(key, value);
    } else if (key == "tanh_cell_output") {
      tanh_cell_output = parse_flag_value(key, value);
    } else if (key == "learned_init") {
      learned_init = parse_flag_value(key, value);
    } else if (key == "batch_size") {
      batch_size = static_cast<std::size_t>(parse_u64_value(key, value));
    } else if (key == "patience") {
      patience_updates = parse_u64_value(key, value);
    } else if (key == "max_updates") {
      max_updates = parse_u64_value(key, value);
    } else if (key == "eval_every") {
      eval_every = parse_u64_value(key, value);
    } else if (key == "seed") {
      seed = parse_u64_value(key, value);
    } else if (key == "adadelta_rho") {
      adadelta_rho = parse_double_value(key, value);
    } else if (key == "adadelta_eps") {
      adadelta_eps = parse_double_value(key, value);
    } else if (key == "stagnation_delta") {
      stagnation_delta = parse_double_value(key, value);
    } else if (key == "stagnation_checks") {
      stagnation_checks = parse_u64_value(key, value);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }

  std::string to_text() const {
    std::string out;
    const auto line = [&out](const char* k, const std::string& v) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    };
    line("context", context_mode_name(context));
    line("motion", flag_text(use_motion));
    line("d_emb", std::to_string(d_emb));
    line("d_h", std::to_string(d_h));
    line("d_a", std::to_string(d_a));
    line("d_p", std::to_string(d_p));
    line("dropout", flag_text(use_dropout));
    line("tanh_cell_output", flag_text(tanh_cell_output));
    line("learned_init", flag_text(learned_init));
    line("batch_size", std::to_string(batch_size));
    line("patience", std::to_string(patience_updates));
    line("max_updates", std::to_string(max_updates));
    line("eval_every", std::to_string(eval_every));
    line("seed", std::to_string(seed));
    line("adadelta_rho", format_double(adadelta_rho));
    line("adadelta_eps", format_double(adadelta_eps));
    line("stagnation_delta", format_double(stagnation_delta));
    line("stagnation_checks", std::to_string(stagnation_checks));
    return out;
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig cfg;
    for (const auto& [key, value] : parse_kv_text(text)) cfg.apply(key, value);
    cfg.validate();
    return cfg;
  }

  // Fields that identify the update stream itself. A resumed run must agree
  // on all of them; stopping budgets (patience, max_updates) may differ.
  std::string stream_mismatch(const TrainConfig& other) const {
    std::string diff;
    const auto note = [&diff](const char* name) {
      if (!diff.empty()) diff += ", ";
      diff += name;
    };
    if (context != other.context) note("context");
    if (use_motion != other.use_motion) note("motion");
    if (d_emb != other.d_emb) note("d_emb");
    if (d_h != other.d_h) note("d_h");
    if (d_a != other.d_a) note("d_a");
    if (d_p != other.d_p) note("d_p");
    if (use_dropout != other.use_dropout) note("dropout");
    if (tanh_cell_output != other.tanh_cell_output) note("tanh_cell_output");
    if (learned_init != other.learned_init) note("learned_init");
    if (batch_size != other.batch_size) note("batch_size");
    if (eval_every != other.eval_every) note("eval_every");
    if (seed != other.seed) note("seed");
    if (adadelta_rho != other.adadelta_rho) note("adadelta_rho");
    if (adadelta_eps != other.adadelta_eps) note("adadelta_eps");
    return diff;
  }
};

inline DecoderConfig make_decoder_config(const TrainConfig& cfg, std::size_t vocab_size,
                                         std::size_t d_v) {
  DecoderConfig d;
  d.vocab_size = vocab_size;
  d.d_emb = cfg.d_emb;
  d.d_h = cfg.d_h;
  d.d_v = d_v;
  d.d_a = cfg.context == ContextMode::kAttention ? cfg.d_a : 0;
  d.d_p = cfg.d_p;
  d.context = cfg.context;
  d.tanh_cell_output = cfg.tanh_cell_output;
  d.learned_init = cfg.learned_init;
  d.dropout = cfg.use_dropout ? 0.5 : 0.0;
  return d;
}

namespace detail {

// splitmix64 finalizer; decorrelates the per-purpose RNG streams that all
// descend from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class T>
void zero_params(ParamStore<T>& ps) {
  for (auto& e : ps) std::fill(e.value.data.begin(), e.value.data.end(), T(0));
}

template <class T>
void scale_params(ParamStore<T>& ps, double s) {
  for (auto& e : ps) {
    for (T& v : e.value.data) v = static_cast<T>(static_cast<double>(v) * s);
  }
}

}  // namespace detail

/// One (video, encoded caption) training pair, features by value. The target
/// must be <eos>-terminated, as produced by Vocab::encode.
template <class T>
struct TrainExample {
  Tensor<T> features;
  std::vector<std::size_t> target;
};

// Mean over the batch of per-pair summed negative log-likelihoods under
// teacher forcing. When `grads` is given, the gradient of that mean is added
// into it (caller keeps ownership of any prior content).
template <class T>
double nll_loss(const Decoder<T>& dec, const ParamStore<T>& params,
                const std::vector<TrainExample<T>>& batch, Rng* dropout_rng = nullptr,
                ParamStore<T>* grads = nullptr) {
  if (batch.empty()) throw ContractError("nll_loss on an empty batch");
  for (const TrainExample<T>& ex : batch) {
    if (ex.target.empty() || ex.target.back() != Vocab::kEos) {
      throw ContractError("training caption must end with <eos>");
    }
  }
  ParamStore<T> accum;
  if (grads != nullptr) accum = ParamStore<T>::zeros_like(params);
  long double total = 0.0L;
  for (const TrainExample<T>& ex : batch) {
    Graph<T> g;
    const BoundParams<T> bp(g, params);
    const auto loss = dec.caption_loss(g, bp, g.constant(ex.features), ex.target, dropout_rng);
    total += static_cast<long double>(g.value(loss)[0]);
    if (grads != nullptr) {
      g.backward(loss);
      bp.accumulate_grads(accum);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grads != nullptr) {
    for (std::size_t i = 0; i < accum.size(); ++i) {
      const auto& src = accum.entry(i);
      Tensor<T>& dst = grads->at(src.name);
      for (std::size_t j = 0; j < src.value.size(); ++j) {
        dst[j] += static_cast<T>(static_cast<double>(src.value[j]) * inv);
      }
    }
  }
  return static_cast<double>(total) * inv;
}

/// Adadelta accumulators, one pair per parameter, plus the two constants.
/// Accumulators stay elementwise nonnegative by construction.
template <class T>
struct AdadeltaState {
  ParamStore<T> grad_sq;
  ParamStore<T> delta_sq;
  double rho = 0.95;
  double eps = 1e-6;

  static AdadeltaState init(const ParamStore<T>& params, double rho, double eps) {
    return AdadeltaState{ParamStore<T>::zeros_like(params), ParamStore<T>::zeros_like(params), rho,
                         eps};
  }
};

// E[g2] <- rho E[g2] + (1-rho) g2; dx = -(sqrt(E[dx2]+eps)/sqrt(E[g2]+eps)) g;
// E[dx2] <- rho E[dx2] + (1-rho) dx2; theta <- theta + dx.
template <class T>
void adadelta_update(ParamStore<T>& params, const ParamStore<T>& grads, AdadeltaState<T>& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& entry = params.entry(i);
    const Tensor<T>& g = grads.at(entry.name);
    Tensor<T>& eg2 = state.grad_sq.at(entry.name);
    Tensor<T>& ed2 = state.delta_sq.at(entry.name);
    if (!entry.value.same_shape(g)) {
      throw DimensionError("gradient shape mismatch for " + entry.name);
    }
    for (std::size_t j = 0; j < entry.value.size(); ++j) {
      const double gv = static_cast<double>(g[j]);
      if (!std::isfinite(gv)) throw NumericError("non-finite gradient for parameter " + entry.name);
      const double new_eg2 = state.rho * static_cast<double>(eg2[j]) + (1.0 - state.rho) * gv * gv;
      const double dx = -(std::sqrt(static_cast<double>(ed2[j]) + state.eps) /
                          std::sqrt(new_eg2 + state.eps)) *
                        gv;
      eg2[j] = static_cast<T>(new_eg2);
      ed2[j] = static_cast<T>(state.rho * static_cast<double>(ed2[j]) + (1.0 - state.rho) * dx * dx);
      entry.value[j] = static_cast<T>(static_cast<double>(entry.value[j]) + dx);
    }
  }
}

// v <- momentum v - lr g; theta <- theta + v.
template <class T>
void sgd_momentum_update(ParamStore<T>& params, const ParamStore<T>& grads,
                         ParamStore<T>& velocity, double lr, double momentum) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& entry = params.entry(i);
    const Tensor<T>& g = grads.at(entry.name);
    Tensor<T>& v = velocity.at(entry.name);
    if (!entry.value.same_shape(g)) {
      throw DimensionError("gradient shape mismatch for " + entry.name);
    }
    for (std::size_t j = 0; j < entry.value.size(); ++j) {
      const double gv = static_cast<double>(g[j]);
      if (!std::isfinite(gv)) throw NumericError("non-finite gradient for parameter " + entry.name);
      const double nv = momentum * static_cast<double>(v[j]) - lr * gv;
      v[j] = static_cast<T>(nv);
      entry.value[j] = static_cast<T>(static_cast<double>(entry.value[j]) + nv);
    }
  }
}

/// Fixed four-phase learning-rate ladder for the SGD classifier loop.
class LrSchedule {
 public:
  static constexpr std::array<double, 4> kRates{0.1, 0.05, 0.02, 0.01};

  double rate() const { return kRates[phase_]; }
  std::size_t phase() const { return phase_; }
  bool last_phase() const { return phase_ + 1 == kRates.size(); }

  // Drops to the next rate. Returns false (the stop signal) when the
  // schedule is already exhausted.
  bool advance() {
    if (last_phase()) return false;
    ++phase_;
    return true;
  }

 private:
  std::size_t phase_ = 0;
};

/// Flags stagnation when `window` consecutive costs in a row each fail to
/// beat the best seen cost by more than `min_delta`. Lower cost is better.
class StagnationDetector {
 public:
  explicit StagnationDetector(double min_delta = 1e-4, std::size_t window = 5)
      : delta_(min_delta), window_(window) {
    if (window == 0) throw ContractError("stagnation window must be >= 1");
    if (min_delta < 0.0) throw ContractError("stagnation delta must be nonnegative");
  }

  bool push(double cost) {
    if (!seeded_ || cost < best_ - delta_) {
      seeded_ = true;
      best_ = std::min(best_, cost);
      streak_ = 0;
      return false;
    }
    ++streak_;
    return streak_ >= window_;
  }

  // After a learning-rate drop the new rate gets a fresh window; the best
  // cost so far is kept as the bar to beat.
  void reset_streak() { streak_ = 0; }

  double best() const { return best_; }
  std::size_t streak() const { return streak_; }

 private:
  double delta_;
  std::size_t window_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t streak_ = 0;
  bool seeded_ = false;
};

/// Full training-run state, sufficient to continue the exact update stream.
/// `params` is the live iterate; `best_params` the best-validation snapshot.
template <class T>
struct Checkpoint {
  TrainConfig config;
  Vocab vocab;
  std::size_t d_v = 0;
  std::uint64_t update = 0;
  std::uint64_t epoch = 0;
  std::uint64_t epoch_pos = 0;  // minibatches already consumed in `epoch`
  std::uint64_t best_update = 0;
  double best_valid_nll = std::numeric_limits<double>::infinity();
  bool has_best = false;
  ParamStore<T> params;
  ParamStore<T> best_params;
  ParamStore<T> grad_sq;
  ParamStore<T> delta_sq;
  std::string mask_rng;  // serialized dropout-mask stream
};

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_store(std::string& out, const ParamStore<T>& ps) {
  put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& e : ps) {
    put_str(out, e.name);
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (const T& v : e.value.data) put_f64(out, static_cast<double>(v));
  }
}

template <class T>
ParamStore<T> read_store(ByteReader& r) {
  ParamStore<T> ps;
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32("name length"), "parameter name");
    const std::uint32_t rank = r.u32("parameter rank");
    if (rank == 0 || rank > 4) {
      throw FormatError(r.path + ": parameter " + name + " has unsupported rank " +
                        std::to_string(rank));
    }
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u32("parameter extent");
    Tensor<T> t(shape);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<T>(r.f64("parameter value"));
    ps.add(name, std::move(t));
  }
  return ps;
}

}  // namespace detail

// Parameter values are stored as 64-bit floats regardless of the working
// precision, so 64-bit runs round trip bit-exactly and 32-bit runs lose
// nothing.
template <class T>
std::string checkpoint_bytes(const Checkpoint<T>& ck) {
  std::string out = "VDCP";
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_str(out, ck.config.to_text());
  detail::put_str(out, ck.vocab.to_text());
  detail::put_u64(out, ck.d_v);
  detail::put_u64(out, ck.update);
  detail::put_u64(out, ck.epoch);
  detail::put_u64(out, ck.epoch_pos);
  detail::put_u64(out, ck.best_update);
  detail::put_f64(out, ck.best_valid_nll);
  detail::put_u32(out, ck.has_best ? 1 : 0);
  detail::write_store(out, ck.params);
  detail::write_store(out, ck.best_params);
  detail::write_store(out, ck.grad_sq);
  detail::write_store(out, ck.delta_sq);
  detail::put_str(out, ck.mask_rng);
  return out;
}

template <class T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  detail::spill(path, checkpoint_bytes(ck));
}

template <class T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  detail::ByteReader r(detail::slurp(path), path);
  r.magic("VDCP");
  const std::uint32_t version = r.u32("checkpoint version");
  if (version != detail::kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint<T> ck;
  ck.config = TrainConfig::from_text(r.str(r.u32("config length"), "config text"));
  ck.vocab = Vocab::from_text(r.str(r.u32("vocabulary length"), "vocabulary text"));
  ck.d_v = static_cast<std::size_t>(r.u64("feature width"));
  ck.update = r.u64("update counter");
  ck.epoch = r.u64("epoch counter");
  ck.epoch_pos = r.u64("epoch position");
  ck.best_update = r.u64("best update");
  ck.best_valid_nll = r.f64("best validation nll");
  ck.has_best = r.u32("best flag") != 0;
  ck.params = detail::read_store<T>(r);
  ck.best_params = detail::read_store<T>(r);
  ck.grad_sq = detail::read_store<T>(r);
  ck.delta_sq = detail::read_store<T>(r);
  ck.mask_rng = r.str(r.u32("rng length"), "rng state");
  if (r.pos != r.bytes.size()) throw FormatError(path + ": trailing bytes after checkpoint");
  return ck;
}

// Minibatch plan for one epoch: shuffle, then stable-sort by length so each
// batch holds near-equal-length captions, chop, and shuffle the batch order.
// Depends only on (lengths, batch_size, seed, epoch), which is what lets a
// resumed run replay the exact stream.
inline std::vector<std::vector<std::size_t>> plan_epoch(const std::vector<std::size_t>& lengths,
                                                        std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("plan_epoch with batch_size 0");
  Rng rng(detail::mix_seed(seed, 2 + epoch));
  std::vector<std::size_t> idx(lengths.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    const std::size_t end = std::min(idx.size(), i + batch_size);
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng.shuffle(batches);
  return batches;
}

struct TrainLogEntry {
  std::uint64_t update = 0;
  double train_nll = 0.0;  // per-token, latest minibatch
  double valid_nll = 0.0;  // per-token, full validation set
};

template <class T>
struct TrainResult {
  Checkpoint<T> checkpoint;
  std::vector<TrainLogEntry> log;  // this invocation's validation checks
  std::string stop_reason;         // "max_updates" or "patience"
};

// Minibatch Adadelta over all (video, caption) pairs; validation every
// eval_every updates keeps the best snapshot and drives early stopping.
// Deterministic given the config; pass `resume` to continue a saved run
// bit-identically. `progress` gets one tab-separated line per check.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<LoadedVideo<T>>& train_set,
                     const std::vector<LoadedVideo<T>>& valid_set,
                     const Checkpoint<T>* resume = nullptr, std::ostream* progress = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (valid_set.empty()) throw DataError("validation set is empty");
  const std::size_t d_v = train_set.front().features.shape.size() == 2
                              ? train_set.front().features.shape[1]
                              : 0;
  const auto check_features = [&](const LoadedVideo<T>& v) {
    if (v.features.rank() != 2 || v.features.shape[1] != d_v || d_v == 0) {
      throw DataError("video " + v.id + " features " + shape_str(v.features.shape) +
                      " do not match the expected width " + std::to_string(d_v));
    }
  };
  for (const auto& v : train_set) check_features(v);
  for (const auto& v : valid_set) check_features(v);

  std::vector<std::vector<std::string>> corpus;
  for (const auto& v : train_set) {
    for (const auto& c : v.captions) corpus.push_back(c);
  }
  const Vocab vocab = Vocab::build(corpus);

  struct PairRef {
    std::size_t video;
    std::vector<std::size_t> target;
  };
  const auto make_pairs = [&](const std::vector<LoadedVideo<T>>& vids) {
    std::vector<PairRef> out;
    for (std::size_t i = 0; i < vids.size(); ++i) {
      for (const auto& c : vids[i].captions) out.push_back({i, vocab.encode(c)});
    }
    return out;
  };
  const std::vector<PairRef> train_pairs = make_pairs(train_set);
  const std::vector<PairRef> valid_pairs = make_pairs(valid_set);
  if (train_pairs.empty()) throw DataError("training set has no captions");
  if (valid_pairs.empty()) throw DataError("validation set has no captions");
  std::vector<std::size_t> lengths(train_pairs.size());
  for (std::size_t i = 0; i < train_pairs.size(); ++i) lengths[i] = train_pairs[i].target.size();

  const Decoder<T> dec(make_decoder_config(cfg, vocab.size(), d_v));

  Checkpoint<T> ck;
  if (resume != nullptr) {
    const std::string diff = cfg.stream_mismatch(resume->config);
    if (!diff.empty()) throw ConfigError("resume config differs from checkpoint in: " + diff);
    if (!(resume->vocab == vocab)) {
      throw DataError("resume vocabulary does not match the training corpus");
    }
    if (resume->d_v != d_v) {
      throw DataError("resume feature width " + std::to_string(resume->d_v) +
                      " does not match the dataset width " + std::to_string(d_v));
    }
    ck = *resume;
    ck.config = cfg;  // budgets (patience, max_updates) may have been raised
  } else {
    ck.config = cfg;
    ck.vocab = vocab;
    ck.d_v = d_v;
    Rng init_rng(cfg.seed);
    ck.params = dec.init_params(init_rng);
    ck.best_params = ck.params;
    ck.grad_sq = ParamStore<T>::zeros_like(ck.params);
    ck.delta_sq = ParamStore<T>::zeros_like(ck.params);
    ck.mask_rng = Rng(detail::mix_seed(cfg.seed, 1)).state_text();
  }

  Rng mask_rng;
  mask_rng.set_state_text(ck.mask_rng);
  AdadeltaState<T> ada{std::move(ck.grad_sq), std::move(ck.delta_sq), cfg.adadelta_rho,
                       cfg.adadelta_eps};
  ParamStore<T> grads = ParamStore<T>::zeros_like(ck.params);

  // Reads parameters and touches no RNG, so running it cannot perturb the
  // update stream.
  const auto valid_eval = [&]() {
    long double total = 0.0L;
    std::size_t tokens = 0;
    for (const PairRef& p : valid_pairs) {
      Graph<T> g;
      const BoundParams<T> bp(g, ck.params);
      const auto loss = dec.caption_loss(g, bp, g.constant(valid_set[p.video].features), p.target);
      total += static_cast<long double>(g.value(loss)[0]);
      tokens += p.target.size();
    }
    return static_cast<double>(total / static_cast<long double>(tokens));
  };

  TrainResult<T> result;
  std::string reason;
  while (reason.empty()) {
    if (ck.update >= cfg.max_updates) {
      reason = "max_updates";
      break;
    }
    const auto batches = plan_epoch(lengths, cfg.batch_size, cfg.seed, ck.epoch);
    for (std::size_t bi = ck.epoch_pos; bi < batches.size() && reason.empty(); ++bi) {
      detail::zero_params(grads);
      long double batch_loss = 0.0L;
      std::size_t batch_tokens = 0;
      for (const std::size_t pi : batches[bi]) {
        const PairRef& pair = train_pairs[pi];
        Graph<T> g;
        const BoundParams<T> bp(g, ck.params);
        const auto loss = dec.caption_loss(g, bp, g.constant(train_set[pair.video].features),
                                           pair.target, cfg.use_dropout ? &mask_rng : nullptr);
        const double lv = static_cast<double>(g.value(loss)[0]);
        if (!std::isfinite(lv)) {
          throw NumericError("training diverged: non-finite loss at update " +
                             std::to_string(ck.update + 1));
        }
        batch_loss += static_cast<long double>(lv);
        batch_tokens += pair.target.size();
        g.backward(loss);
        bp.accumulate_grads(grads);
      }
      detail::scale_params(grads, 1.0 / static_cast<double>(batches[bi].size()));
      adadelta_update(ck.params, grads, ada);
      ++ck.update;
      ck.epoch_pos = bi + 1;

      if (ck.update % cfg.eval_every == 0) {
        const double train_nll =
            static_cast<double>(batch_loss / static_cast<long double>(batch_tokens));
        const double valid_nll = valid_eval();
        if (!std::isfinite(valid_nll)) {
          throw NumericError("training diverged: non-finite validation loss at update " +
                             std::to_string(ck.update));
        }
        result.log.push_back({ck.update, train_nll, valid_nll});
        if (progress != nullptr) {
          (*progress) << ck.update << '\t' << format_double(train_nll) << '\t'
                      << format_double(valid_nll) << '\n';
        }
        if (!ck.has_best || valid_nll < ck.best_valid_nll) {
          ck.has_best = true;
          ck.best_valid_nll = valid_nll;
          ck.best_update = ck.update;
          ck.best_params = ck.params;
        } else if (ck.update - ck.best_update >= cfg.patience_updates) {
          reason = "patience";
        }
      }
      if (reason.empty() && ck.update >= cfg.max_updates) reason = "max_updates";
    }
    if (reason.empty()) {
      ++ck.epoch;
      ck.epoch_pos = 0;
    }
  }

  ck.grad_sq = std::move(ada.grad_sq);
  ck.delta_sq = std::move(ada.delta_sq);
  ck.mask_rng = mask_rng.state_text();
  result.checkpoint = std::move(ck);
  result.stop_reason = std::move(reason);
  return result;
}

/// Hyperparameter ranges for random_search; log-uniform integer draws.
struct SearchSpace {
  std::size_t d_emb_min = 100;
  std::size_t d_emb_max = 1000;
  std::size_t d_h_min = 100;
  std::size_t d_h_max = 3000;
};

// Draw order per trial is fixed (d_emb, d_h, dropout flag) so a seed pins
// the whole list; shared across model variants for like-for-like selection.
inline std::vector<TrainConfig> random_search(const TrainConfig& base, const SearchSpace& space,
                                              std::size_t n_trials, std::uint64_t seed) {
  if (n_trials < 1) throw ContractError("random_search needs n_trials >= 1");
  if (space.d_emb_min == 0 || space.d_emb_min > space.d_emb_max || space.d_h_min == 0 ||
      space.d_h_min > space.d_h_max) {
    throw ConfigError("random_search ranges must satisfy 0 < min <= max");
  }
  Rng rng(seed);
  const auto log_uniform = [&rng](std::size_t lo, std::size_t hi) {
    const double v = std::exp(rng.uniform(std::log(static_cast<double>(lo)),
                                          std::log(static_cast<double>(hi))));
    const auto r = static_cast<std::size_t>(std::llround(v));
    return std::clamp(r, lo, hi);
  };
  std::vector<TrainConfig> out;
  out.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    TrainConfig cfg = base;
    cfg.d_emb = log_uniform(space.d_emb_min, space.d_emb_max);
    cfg.d_h = log_uniform(space.d_h_min, space.d_h_max);
    cfg.use_dropout = rng.uniform() < 0.5;
    out.push_back(cfg);
  }
  return out;
}

}  // namespace vdc
