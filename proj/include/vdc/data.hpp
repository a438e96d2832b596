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
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vdc/errors.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

// Splits text into maximal runs of word characters and maximal runs of
// non-space punctuation (the wordpunct rule). No lowercasing or other
// normalization. Bytes >= 0x80 count as word characters so UTF-8 letters
// stay inside word runs.
inline std::vector<std::string> tokenize(const std::string& text) {
  const auto is_word = [](unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c >= 0x80;
  };
  const auto is_space = [](unsigned char c) { return c == ' ' || (c >= 0x09 && c <= 0x0d); };

  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    const bool word = is_word(c);
    std::size_t j = i + 1;
    while (j < text.size()) {
      const unsigned char d = static_cast<unsigned char>(text[j]);
      if (is_space(d) || is_word(d) != word) break;
      ++j;
    }
    out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token/index bijection with fixed reserved slots. Indices are dense and
/// assigned in first-occurrence order over the corpus.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kUnk = 2;

  Vocab() {
    add_token("<pad>");
    add_token("<eos>");
    add_token("<unk>");
  }

  static Vocab build(const std::vector<std::vector<std::string>>& corpus) {
    Vocab v;
    for (const auto& tokens : corpus)
      for (const auto& t : tokens)
        if (!v.index_.count(t)) v.add_token(t);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  const std::string& token(std::size_t i) const {
    if (i >= tokens_.size()) {
      throw IndexError("vocab index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(tokens_.size()) + ")");
    }
    return tokens_[i];
  }

  bool contains(const std::string& t) const { return index_.count(t) != 0; }

  // Missing tokens map to <unk>; callers that must not see <unk> check
  // `contains` first.
  std::size_t index_or_unk(const std::string& t) const {
    auto it = index_.find(t);
    return it == index_.end() ? kUnk : it->second;
  }

  // Appends <eos>. <pad> is never produced: it is not a real token.
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size() + 1);
    for (const auto& t : tokens) out.push_back(index_or_unk(t));
    out.push_back(kEos);
    return out;
  }

  // Inverse of encode: stops at <eos>, skips <pad>.
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> out;
    for (std::size_t id : ids) {
      if (id == kEos) break;
      if (id == kPad) continue;
      out.push_back(token(id));
    }
    return out;
  }

  // One token per line, index order. Tokens never contain whitespace, so the
  // format is unambiguous.
  std::string to_text() const {
    std::string out;
    for (const auto& t : tokens_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  static Vocab from_text(const std::string& text) {
    Vocab v;
    v.tokens_.clear();
    v.index_.clear();
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (v.index_.count(line)) throw FormatError("duplicate vocab token: " + line);
      v.add_token(line);
    }
    if (v.size() < 3 || v.tokens_[kPad] != "<pad>" || v.tokens_[kEos] != "<eos>" ||
        v.tokens_[kUnk] != "<unk>") {
      throw FormatError("vocab text missing reserved tokens");
    }
    return v;
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;

  void add_token(const std::string& t) {
    index_[t] = tokens_.size();
    tokens_.push_back(t);
  }
};

// ---------------------------------------------------------------------------
// Binary file formats (little-endian)
// ---------------------------------------------------------------------------

namespace detail {

struct ByteReader {
  std::string bytes;
  std::size_t pos = 0;
  std::string path;

  ByteReader(std::string b, std::string p) : bytes(std::move(b)), path(std::move(p)) {}

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size()) {
      throw FormatError(path + ": truncated reading " + what + " at byte offset " +
                        std::to_string(pos));
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    pos += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32(const char* what) {
    const std::uint32_t u = u32(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }

  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }

  double f64(const char* what) {
    const std::uint64_t u = u64(what);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }

  void magic(const char* expect) {
    need(4, "magic");
    if (bytes.compare(pos, 4, expect) != 0) {
      throw FormatError(path + ": bad magic at byte offset " + std::to_string(pos) +
                        ", expected \"" + expect + "\"");
    }
    pos += 4;
  }
};

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(out, u);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  put_u64(out, u);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

}  // namespace detail

// Feature file: "VTFC", u32 version=1, u32 n, u32 d_v, n*d_v f32 row-major.
inline void write_features(const std::string& path, const Tensor<float>& rows) {
  if (rows.rank() != 2) throw DimensionError("feature set must be rank-2, got " + shape_str(rows.shape));
  std::string out;
  out.reserve(16 + rows.size() * 4);
  out += "VTFC";
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(rows.shape[0]));
  detail::put_u32(out, static_cast<std::uint32_t>(rows.shape[1]));
  for (float f : rows.data) detail::put_f32(out, f);
  detail::spill(path, out);
}

inline Tensor<float> read_features(const std::string& path) {
  detail::ByteReader r(detail::slurp(path), path);
  r.magic("VTFC");
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw FormatError(path + ": unsupported feature file version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32("row count");
  const std::uint32_t d = r.u32("row width");
  if (n == 0 || d == 0) throw FormatError(path + ": empty feature extents");
  Tensor<float> t({n, d});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32("feature data");
  if (r.pos != r.bytes.size()) {
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.pos));
  }
  return t;
}

// Descriptor grid: "VDGR", u32 version=1, u32 W,H,T,C, f32 data in W,H,T,C
// row-major order.
inline void write_grid(const std::string& path, const Tensor<float>& grid) {
  if (grid.rank() != 4) throw DimensionError("descriptor grid must be rank-4, got " + shape_str(grid.shape));
  std::string out;
  out.reserve(24 + grid.size() * 4);
  out += "VDGR";
  detail::put_u32(out, 1);
  for (int d = 0; d < 4; ++d) detail::put_u32(out, static_cast<std::uint32_t>(grid.shape[d]));
  for (float f : grid.data) detail::put_f32(out, f);
  detail::spill(path, out);
}

inline Tensor<float> read_grid(const std::string& path) {
  detail::ByteReader r(detail::slurp(path), path);
  r.magic("VDGR");
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw FormatError(path + ": unsupported grid file version " + std::to_string(version));
  }
  Shape shape(4);
  for (int d = 0; d < 4; ++d) {
    shape[d] = r.u32("grid extent");
    if (shape[d] == 0) throw FormatError(path + ": zero grid extent");
  }
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32("grid data");
  if (r.pos != r.bytes.size()) {
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.pos));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON lines)
// ---------------------------------------------------------------------------

/// One video: id, feature path(s) relative to the manifest, raw captions.
/// `motion` is optional; empty string means the record has appearance
/// features only.
struct VideoRecord {
  std::string id;
  std::string features;
  std::string motion;
  std::vector<std::string> captions;
};

inline std::vector<VideoRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::vector<VideoRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    VideoRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.features = j.at("features").get<std::string>();
      if (j.contains("motion")) rec.motion = j.at("motion").get<std::string>();
      for (const auto& c : j.at("captions")) rec.captions.push_back(c.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
    }
    if (rec.captions.empty()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": video " + rec.id +
                        " has no captions");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<VideoRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  for (const auto& rec : records) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["features"] = rec.features;
    if (!rec.motion.empty()) j["motion"] = rec.motion;
    j["captions"] = rec.captions;
    out << j.dump() << "\n";
  }
}

/// A video ready for training/eval: features in memory, captions tokenized.
template <class T>
struct LoadedVideo {
  std::string id;
  Tensor<T> features;  // n x d_v (motion columns appended when requested)
  std::vector<std::vector<std::string>> captions;
};

template <class T, class U>
Tensor<T> cast_tensor(const Tensor<U>& src) {
  Tensor<T> out(src.shape);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<T>(src[i]);
  return out;
}

// Loads every video in a manifest. Relative feature paths resolve against
// the manifest's directory. With `use_motion`, each record must carry a
// motion file whose row count matches; its columns are appended.
template <class T>
std::vector<LoadedVideo<T>> load_dataset(const std::string& manifest_path, bool use_motion) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<LoadedVideo<T>> out;
  for (const VideoRecord& rec : read_manifest(manifest_path)) {
    LoadedVideo<T> v;
    v.id = rec.id;
    const Tensor<float> app = read_features((base / rec.features).string());
    if (use_motion) {
      if (rec.motion.empty()) {
        throw DataError("video " + rec.id + " has no motion features but motion input was requested");
      }
      const Tensor<float> mot = read_features((base / rec.motion).string());
      if (mot.shape[0] != app.shape[0]) {
        throw DataError("video " + rec.id + ": motion rows " + shape_str(mot.shape) +
                        " do not match appearance rows " + shape_str(app.shape));
      }
      Tensor<float> joined({app.shape[0], app.shape[1] + mot.shape[1]});
      for (std::size_t i = 0; i < app.shape[0]; ++i) {
        for (std::size_t j = 0; j < app.shape[1]; ++j) joined.at2(i, j) = app.at2(i, j);
        for (std::size_t j = 0; j < mot.shape[1]; ++j) joined.at2(i, app.shape[1] + j) = mot.at2(i, j);
      }
      v.features = cast_tensor<T>(joined);
    } else {
      v.features = cast_tensor<T>(app);
    }
    for (const auto& c : rec.captions) v.captions.push_back(tokenize(c));
    out.push_back(std::move(v));
  }
  if (out.empty()) throw DataError("manifest has no videos: " + manifest_path);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic ordered-events corpus
// ---------------------------------------------------------------------------

/// Ordered-events surrogate corpus. Each video is `n_slots` temporal slots;
/// a few carry noisy one-hot event vectors, the caption names those events
/// in slot order. Slot vectors also carry clean positional channels, so an
/// attention model can address slots by position; without them no
/// content-based scorer could recover event order.
struct SynthConfig {
  std::size_t event_vocab = 20;
  std::size_t min_events = 2;
  std::size_t max_events = 4;
  std::size_t n_slots = 26;
  std::size_t pos_dims = 4;
  std::size_t d_motion = 16;
  double noise = 0.08;
  double distractor_prob = 0.3;
  std::size_t n_train = 2000;
  std::size_t n_valid = 200;
  std::size_t n_test = 200;
  std::uint64_t seed = 7;
  bool with_motion = true;

  std::size_t d_app() const { return event_vocab + pos_dims; }

  void validate() const {
    if (event_vocab == 0) throw ContractError("synth: event vocabulary must be nonempty");
    if (min_events < 1 || min_events > max_events) {
      throw ContractError("synth: invalid events-per-video range [" + std::to_string(min_events) +
                          ", " + std::to_string(max_events) + "]");
    }
    if (max_events > n_slots) {
      throw ContractError("synth: events per video " + std::to_string(max_events) +
                          " exceeds slot count " + std::to_string(n_slots));
    }
    if (max_events > event_vocab) {
      throw ContractError("synth: events per video exceeds event vocabulary");
    }
    if (noise < 0.0 || distractor_prob < 0.0 || distractor_prob > 1.0) {
      throw ContractError("synth: noise/distractor settings out of range");
    }
    if (n_train == 0 || n_valid == 0 || n_test == 0) {
      throw ContractError("synth: all splits must be nonempty");
    }
  }
};

struct SynthVideo {
  std::string id;
  Tensor<float> appearance;  // n_slots x d_app
  Tensor<float> motion;      // n_slots x d_motion (empty when disabled)
  std::string caption;
  std::vector<std::size_t> event_slots;  // caption position i+1 emits slot event_slots[i]
};

struct SynthData {
  std::vector<SynthVideo> train, valid, test;
  Tensor<float> motion_prototypes;  // event_vocab x d_motion
};

namespace detail {

inline void synth_fill_video(SynthVideo& v, const SynthConfig& cfg,
                             const Tensor<float>& motion_proto, Rng& rng) {
  const std::size_t n = cfg.n_slots;
  const std::size_t k = cfg.min_events + static_cast<std::size_t>(
                            rng.below(cfg.max_events - cfg.min_events + 1));

  // k distinct event ids, then k distinct slots in ascending order.
  std::vector<std::size_t> ids(cfg.event_vocab);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  rng.shuffle(ids);
  ids.resize(k);

  std::vector<std::size_t> slots(n);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  slots.resize(k);
  std::sort(slots.begin(), slots.end());

  v.event_slots = slots;
  v.caption = "video";
  std::vector<char> is_event(n, 0);
  std::vector<std::size_t> slot_event(n, 0);
  for (std::size_t i = 0; i < k; ++i) {
    is_event[slots[i]] = 1;
    slot_event[slots[i]] = ids[i];
    v.caption += " e" + std::to_string(ids[i]);
  }

  v.appearance = Tensor<float>::zeros({n, cfg.d_app()});
  if (cfg.with_motion) v.motion = Tensor<float>::zeros({n, cfg.d_motion});
  const double two_pi = 6.283185307179586476925286766559;
  for (std::size_t s = 0; s < n; ++s) {
    const bool event = is_event[s] != 0;
    const bool distractor = !event && rng.uniform() < cfg.distractor_prob;
    for (std::size_t j = 0; j < cfg.event_vocab; ++j) {
      double val = 0.0;
      if (event) val = (j == slot_event[s] ? 1.0 : 0.0) + cfg.noise * rng.normal();
      if (distractor) val = 0.5 * rng.normal();
      v.appearance.at2(s, j) = static_cast<float>(val);
    }
    // Positional channels are exact for every slot; they are an address, not
    // content, so they carry no noise.
    const double frac = n > 1 ? static_cast<double>(s) / static_cast<double>(n - 1) : 0.0;
    const double angle = two_pi * static_cast<double>(s) / static_cast<double>(n);
    const double pos[4] = {frac, std::sin(angle), std::cos(angle), std::sin(2.0 * angle)};
    for (std::size_t j = 0; j < cfg.pos_dims; ++j) {
      v.appearance.at2(s, cfg.event_vocab + j) = static_cast<float>(pos[j % 4]);
    }
    if (cfg.with_motion) {
      for (std::size_t j = 0; j < cfg.d_motion; ++j) {
        double val = 0.0;
        if (event) val = motion_proto.at2(slot_event[s], j) + cfg.noise * rng.normal();
        if (distractor) val = 0.5 * rng.normal();
        v.motion.at2(s, j) = static_cast<float>(val);
      }
    }
  }
}

}  // namespace detail

inline SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData data;

  // Motion prototypes: one unit-norm direction per event word, shared by all
  // splits. Drawn from the master seed before any video.
  Rng proto_rng(cfg.seed);
  data.motion_prototypes = Tensor<float>::zeros({cfg.event_vocab, std::max<std::size_t>(cfg.d_motion, 1)});
  if (cfg.d_motion > 0) {
    for (std::size_t e = 0; e < cfg.event_vocab; ++e) {
      double norm2 = 0.0;
      std::vector<double> row(cfg.d_motion);
      for (std::size_t j = 0; j < cfg.d_motion; ++j) {
        row[j] = proto_rng.normal();
        norm2 += row[j] * row[j];
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t j = 0; j < cfg.d_motion; ++j) {
        data.motion_prototypes.at2(e, j) = static_cast<float>(row[j] * inv);
      }
    }
  }

  const struct {
    const char* prefix;
    std::size_t count;
    std::vector<SynthVideo>* out;
  } splits[] = {
      {"tr", cfg.n_train, &data.train},
      {"va", cfg.n_valid, &data.valid},
      {"te", cfg.n_test, &data.test},
  };
  for (std::size_t si = 0; si < 3; ++si) {
    // Per-video seeds come from a per-split stream, so any one video can be
    // regenerated without replaying the whole corpus.
    Rng split_rng(cfg.seed * 1000003 + si + 1);
    for (std::size_t i = 0; i < splits[si].count; ++i) {
      SynthVideo v;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%05zu", splits[si].prefix, i);
      v.id = buf;
      Rng video_rng(split_rng.raw());
      detail::synth_fill_video(v, cfg, data.motion_prototypes, video_rng);
      splits[si].out->push_back(std::move(v));
    }
  }
  return data;
}

// Writes a generated corpus: per-video feature files under features/, one
// manifest and one alignment file per split. Alignment lines map caption
// positions 1..k (position 0 is the fixed lead word) to slot indices.
inline void synth_write(const SynthData& data, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "features");
  const struct {
    const char* name;
    const std::vector<SynthVideo>* videos;
  } splits[] = {
      {"train", &data.train},
      {"valid", &data.valid},
      {"test", &data.test},
  };
  for (const auto& split : splits) {
    std::vector<VideoRecord> records;
    std::ofstream align((fs::path(out_dir) / (std::string(split.name) + "_alignment.jsonl")).string(),
                        std::ios::trunc);
    if (!align) throw DataError("cannot write alignment file in " + out_dir);
    for (const SynthVideo& v : *split.videos) {
      VideoRecord rec;
      rec.id = v.id;
      rec.features = "features/" + v.id + ".vtfc";
      write_features((fs::path(out_dir) / rec.features).string(), v.appearance);
      if (v.motion.size() > 0 && v.motion.rank() == 2) {
        rec.motion = "features/" + v.id + ".motion.vtfc";
        write_features((fs::path(out_dir) / rec.motion).string(), v.motion);
      }
      rec.captions.push_back(v.caption);
      records.push_back(std::move(rec));

      nlohmann::json j;
      j["id"] = v.id;
      j["slots"] = v.event_slots;
      align << j.dump() << "\n";
    }
    write_manifest((fs::path(out_dir) / (std::string(split.name) + ".jsonl")).string(), records);
  }
}

inline std::unordered_map<std::string, std::vector<std::size_t>> read_alignment(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open alignment file: " + path);
  std::unordered_map<std::string, std::vector<std::size_t>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("slots").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad alignment record: " + e.what());
    }
  }
  return out;
}

}  // namespace vdc
