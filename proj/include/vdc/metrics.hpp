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
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vdc/config.hpp"
#include "vdc/decoder.hpp"
#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/tensor.hpp"
#include "vdc/trainer.hpp"

namespace vdc {

namespace detail {

// N-grams keyed as tokens joined with an unprintable separator; ordered
// maps keep every reduction order deterministic.
inline std::map<std::string, long> ngram_counts(const std::vector<std::string>& toks,
                                                std::size_t n) {
  std::map<std::string, long> out;
  if (toks.size() < n || n == 0) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += toks[i + j];
    }
    out[key] += 1;
  }
  return out;
}

inline void check_scoring_corpus(const std::vector<std::vector<std::string>>& cands,
                                 const std::vector<std::vector<std::vector<std::string>>>& refs) {
  if (cands.size() != refs.size()) {
    throw ContractError("candidate count " + std::to_string(cands.size()) +
                        " does not match reference group count " + std::to_string(refs.size()));
  }
  if (cands.empty()) throw ContractError("scoring an empty corpus");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) {
      throw ContractError("video " + std::to_string(i) + " has no references");
    }
  }
}

}  // namespace detail

// Corpus-level BLEU: modified n-gram precision with per-video clipping,
// geometric mean over n=1..max_n, brevity penalty exp(1-r/c) when the
// candidate corpus is shorter than the closest-length references. Any
// empty precision zeroes the score (no smoothing).
inline double bleu(const std::vector<std::vector<std::string>>& cands,
                   const std::vector<std::vector<std::vector<std::string>>>& refs,
                   std::size_t max_n = 4) {
  if (max_n == 0) throw ContractError("bleu needs max_n >= 1");
  detail::check_scoring_corpus(cands, refs);

  double log_p_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    long num = 0;
    long den = 0;
    for (std::size_t v = 0; v < cands.size(); ++v) {
      const auto cc = detail::ngram_counts(cands[v], n);
      std::map<std::string, long> clip;
      for (const auto& ref : refs[v]) {
        for (const auto& [key, k] : detail::ngram_counts(ref, n)) {
          clip[key] = std::max(clip[key], k);
        }
      }
      for (const auto& [key, k] : cc) {
        const auto it = clip.find(key);
        num += std::min(k, it == clip.end() ? 0L : it->second);
        den += k;
      }
    }
    if (num == 0 || den == 0) return 0.0;
    log_p_sum += std::log(static_cast<double>(num) / static_cast<double>(den));
  }

  long c_total = 0;
  long r_total = 0;
  for (std::size_t v = 0; v < cands.size(); ++v) {
    const long c_len = static_cast<long>(cands[v].size());
    c_total += c_len;
    long best_len = 0;
    long best_dist = -1;
    for (const auto& ref : refs[v]) {
      const long r_len = static_cast<long>(ref.size());
      const long dist = std::labs(r_len - c_len);
      // closest reference length; exact ties resolve to the shorter one
      if (best_dist < 0 || dist < best_dist || (dist == best_dist && r_len < best_len)) {
        best_dist = dist;
        best_len = r_len;
      }
    }
    r_total += best_len;
  }
  const double bp = c_total < r_total
                        ? std::exp(1.0 - static_cast<double>(r_total) / static_cast<double>(c_total))
                        : 1.0;
  return bp * std::exp(log_p_sum / static_cast<double>(max_n));
}

struct CiderScores {
  double corpus = 0.0;
  std::vector<double> per_video;
};

// Consensus-based scoring: TF-IDF n-gram vectors (document frequency over
// reference groups), cosine similarity averaged over references per n,
// mean over n=1..max_n scaled by 10. `cider_d` additionally applies the
// length-difference Gaussian penalty exp(-(lc-lr)^2 / (2 sigma^2)).
inline CiderScores cider_scores(const std::vector<std::vector<std::string>>& cands,
                                const std::vector<std::vector<std::vector<std::string>>>& refs,
                                std::size_t max_n = 4, double sigma = 6.0, bool cider_d = false) {
  if (max_n == 0) throw ContractError("cider needs max_n >= 1");
  detail::check_scoring_corpus(cands, refs);
  if (refs.size() < 2) {
    throw ContractError("cider needs at least 2 videos to compute document frequency");
  }

  std::vector<std::map<std::string, long>> df(max_n + 1);
  for (const auto& rgroup : refs) {
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::set<std::string> seen;
      for (const auto& ref : rgroup) {
        for (const auto& [key, k] : detail::ngram_counts(ref, n)) seen.insert(key);
      }
      for (const auto& key : seen) df[n][key] += 1;
    }
  }

  const double num_videos = static_cast<double>(refs.size());
  const auto weigh = [&](const std::vector<std::string>& toks, std::size_t n) {
    std::map<std::string, double> vec;
    for (const auto& [key, k] : detail::ngram_counts(toks, n)) {
      vec[key] =
          static_cast<double>(k) * std::log(num_videos / std::max(1.0, static_cast<double>(df[n][key])));
    }
    return vec;
  };
  const auto cosine = [](const std::map<std::string, double>& a,
                         const std::map<std::string, double>& b) {
    double na = 0.0;
    double nb = 0.0;
    for (const auto& [key, w] : a) na += w * w;
    for (const auto& [key, w] : b) nb += w * w;
    if (na == 0.0 || nb == 0.0) return 0.0;
    double dot = 0.0;
    for (const auto& [key, w] : a) {
      const auto it = b.find(key);
      if (it != b.end()) dot += w * it->second;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  CiderScores out;
  out.per_video.reserve(cands.size());
  for (std::size_t v = 0; v < cands.size(); ++v) {
    double total = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto vc = weigh(cands[v], n);
      double s = 0.0;
      for (const auto& ref : refs[v]) {
        double pen = 1.0;
        if (cider_d) {
          const double diff =
              static_cast<double>(cands[v].size()) - static_cast<double>(ref.size());
          pen = std::exp(-(diff * diff) / (2.0 * sigma * sigma));
        }
        s += cosine(vc, weigh(ref, n)) * pen;
      }
      total += s / static_cast<double>(refs[v].size());
    }
    out.per_video.push_back(10.0 * total / static_cast<double>(max_n));
  }
  double sum = 0.0;
  for (double x : out.per_video) sum += x;
  out.corpus = sum / num_videos;
  return out;
}

inline double cider(const std::vector<std::vector<std::string>>& cands,
                    const std::vector<std::vector<std::vector<std::string>>>& refs,
                    std::size_t max_n = 4, double sigma = 6.0, bool cider_d = false) {
  return cider_scores(cands, refs, max_n, sigma, cider_d).corpus;
}

// Teacher-forced corpus perplexity: exp of total NLL over total token
// count, <eos> included. Matches the trainer's per-token validation NLL
// through exp().
template <class T>
double perplexity(const Decoder<T>& dec, const ParamStore<T>& params,
                  const std::vector<TrainExample<T>>& data) {
  if (data.empty()) throw ContractError("perplexity of an empty dataset");
  long double total = 0.0L;
  std::size_t tokens = 0;
  for (const TrainExample<T>& ex : data) {
    Graph<T> g;
    const BoundParams<T> bp(g, params);
    const auto loss = dec.caption_loss(g, bp, g.constant(ex.features), ex.target);
    total += static_cast<long double>(g.value(loss)[0]);
    tokens += ex.target.size();
  }
  return static_cast<double>(std::exp(total / static_cast<long double>(tokens)));
}

struct VideoEval {
  std::string id;
  double cider = 0.0;
};

struct EvalReport {
  double bleu_4 = 0.0;
  double cider = 0.0;
  double perplexity = 0.0;
  std::vector<VideoEval> videos;

  void validate() const {
    if (!std::isfinite(bleu_4) || !std::isfinite(cider) || !std::isfinite(perplexity)) {
      throw NumericError("evaluation report contains non-finite scores");
    }
    if (bleu_4 < 0.0 || bleu_4 > 1.0 || cider < 0.0 || perplexity < 1.0) {
      throw NumericError("evaluation report scores out of range");
    }
  }
};

// Human-readable block. The meteor line stays null: that metric needs
// external synonym resources and is intentionally not computed.
inline std::string report_block(const EvalReport& r, const std::string& run_id,
                                const std::string& mode) {
  std::string out;
  out += "run = " + run_id + "\n";
  out += "mode = " + mode + "\n";
  out += "bleu_4 = " + format_double(r.bleu_4) + "\n";
  out += "meteor = null\n";
  out += "cider = " + format_double(r.cider) + "\n";
  out += "perplexity = " + format_double(r.perplexity) + "\n";
  for (const VideoEval& v : r.videos) {
    out += "cider." + v.id + " = " + format_double(v.cider) + "\n";
  }
  return out;
}

// Machine-readable single-line record.
inline std::string report_line(const EvalReport& r, const std::string& run_id,
                               const std::string& mode) {
  return run_id + "\t" + mode + "\t" + format_double(r.bleu_4) + "\t" + format_double(r.cider) +
         "\t" + format_double(r.perplexity);
}

}  // namespace vdc
