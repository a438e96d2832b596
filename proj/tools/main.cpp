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

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdc/config.hpp"
#include "vdc/data.hpp"
#include "vdc/decoder.hpp"
#include "vdc/errors.hpp"
#include "vdc/gradcheck.hpp"
#include "vdc/inference.hpp"
#include "vdc/metrics.hpp"
#include "vdc/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kVerifyFail = 1;
constexpr int kConfigErr = 2;
constexpr int kDataErr = 3;
constexpr int kModeErr = 4;
constexpr int kIdErr = 5;

// Caption ids not lining up with the dataset gets its own exit code.
struct IdMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int precision_bits() {
  const char* env = std::getenv("VDC_PRECISION");
  if (env == nullptr || *env == '\0') return 64;
  const std::string s = env;
  if (s == "32") return 32;
  if (s == "64") return 64;
  throw vdc::ConfigError("VDC_PRECISION must be 32 or 64, got '" + s + "'");
}

// Hash of a file's bytes the way git hashes a blob, so checkpoints can be
// cross-checked against a git object store.
std::string git_blob_sha1(const std::string& bytes) {
  std::string payload = "blob " + std::to_string(bytes.size());
  payload.push_back('\0');
  payload += bytes;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw vdc::NumericError("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

json kv_text_to_json(const std::string& text) {
  json obj = json::object();
  for (const auto& [key, value] : vdc::parse_kv_text(text)) obj[key] = value;
  return obj;
}

// Every command drops a manifest next to its outputs: enough to rerun the
// command and to verify the checkpoint it read or wrote.
void write_run_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                        std::uint64_t seed, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs, double wall_seconds,
                        const std::string& checkpoint_sha1) {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["wall_clock_seconds"] = wall_seconds;
  if (checkpoint_sha1.empty()) {
    j["checkpoint_sha1"] = nullptr;
  } else {
    j["checkpoint_sha1"] = checkpoint_sha1;
  }
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "run_manifest.json", std::ios::trunc);
  if (!out) throw vdc::DataError("cannot write run manifest in " + out_dir.string());
  out << j.dump(2) << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string variant_name(const vdc::TrainConfig& cfg) {
  std::string s = cfg.context == vdc::ContextMode::kAttention ? "attention" : "mean";
  if (cfg.use_motion) s += "+motion";
  return s;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void synth_apply(vdc::SynthConfig& cfg, const std::string& key, const std::string& value) {
  using vdc::parse_double_value;
  using vdc::parse_flag_value;
  using vdc::parse_u64_value;
  if (key == "event_vocab") cfg.event_vocab = parse_u64_value(key, value);
  else if (key == "min_events") cfg.min_events = parse_u64_value(key, value);
  else if (key == "max_events") cfg.max_events = parse_u64_value(key, value);
  else if (key == "n_slots") cfg.n_slots = parse_u64_value(key, value);
  else if (key == "pos_dims") cfg.pos_dims = parse_u64_value(key, value);
  else if (key == "d_motion") cfg.d_motion = parse_u64_value(key, value);
  else if (key == "noise") cfg.noise = parse_double_value(key, value);
  else if (key == "distractor_prob") cfg.distractor_prob = parse_double_value(key, value);
  else if (key == "n_train") cfg.n_train = parse_u64_value(key, value);
  else if (key == "n_valid") cfg.n_valid = parse_u64_value(key, value);
  else if (key == "n_test") cfg.n_test = parse_u64_value(key, value);
  else if (key == "seed") cfg.seed = parse_u64_value(key, value);
  else if (key == "motion") cfg.with_motion = parse_flag_value(key, value);
  else throw vdc::ConfigError("unknown config key: " + key);
}

std::string synth_to_text(const vdc::SynthConfig& cfg) {
  using vdc::format_double;
  std::string out;
  const auto line = [&](const char* key, const std::string& value) {
    out += std::string(key) + " = " + value + "\n";
  };
  line("event_vocab", std::to_string(cfg.event_vocab));
  line("min_events", std::to_string(cfg.min_events));
  line("max_events", std::to_string(cfg.max_events));
  line("n_slots", std::to_string(cfg.n_slots));
  line("pos_dims", std::to_string(cfg.pos_dims));
  line("d_motion", std::to_string(cfg.d_motion));
  line("noise", format_double(cfg.noise));
  line("distractor_prob", format_double(cfg.distractor_prob));
  line("n_train", std::to_string(cfg.n_train));
  line("n_valid", std::to_string(cfg.n_valid));
  line("n_test", std::to_string(cfg.n_test));
  line("seed", std::to_string(cfg.seed));
  line("motion", vdc::flag_text(cfg.with_motion));
  return out;
}

struct SynthArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> sets;
};

int run_synth(const SynthArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  vdc::SynthConfig cfg;
  std::vector<std::string> inputs;
  if (!args.config_path.empty()) {
    for (const auto& [key, value] : vdc::parse_kv_text(vdc::detail::slurp(args.config_path))) {
      synth_apply(cfg, key, value);
    }
    inputs.push_back(args.config_path);
  }
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw vdc::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    synth_apply(cfg, vdc::trim_ws(kv.substr(0, eq)), vdc::trim_ws(kv.substr(eq + 1)));
  }
  cfg.validate();

  const vdc::SynthData data = vdc::synth_generate(cfg);
  vdc::synth_write(data, args.out_dir);

  std::vector<std::string> outputs;
  for (const char* split : {"train", "valid", "test"}) {
    outputs.push_back((fs::path(args.out_dir) / (std::string(split) + ".jsonl")).string());
    outputs.push_back((fs::path(args.out_dir) / (std::string(split) + "_alignment.jsonl")).string());
  }
  outputs.push_back((fs::path(args.out_dir) / "features").string());
  write_run_manifest(args.out_dir, "synth", kv_text_to_json(synth_to_text(cfg)), cfg.seed, inputs,
                     outputs, seconds_since(start), "");
  std::cout << "synth: wrote " << data.train.size() << " train / " << data.valid.size()
            << " valid / " << data.test.size() << " test videos to " << args.out_dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

// Config keys the CLI can override, in a fixed application order.
const std::vector<std::pair<const char*, const char*>> kTrainFlagKeys = {
    {"--context", "context"},
    {"--motion", "motion"},
    {"--d-emb", "d_emb"},
    {"--d-h", "d_h"},
    {"--d-a", "d_a"},
    {"--d-p", "d_p"},
    {"--dropout", "dropout"},
    {"--tanh-cell-output", "tanh_cell_output"},
    {"--learned-init", "learned_init"},
    {"--batch-size", "batch_size"},
    {"--patience", "patience"},
    {"--max-updates", "max_updates"},
    {"--eval-every", "eval_every"},
    {"--seed", "seed"},
    {"--adadelta-rho", "adadelta_rho"},
    {"--adadelta-eps", "adadelta_eps"},
    {"--stagnation-delta", "stagnation_delta"},
    {"--stagnation-checks", "stagnation_checks"},
};

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string resume_path;
  std::map<std::string, std::string> values;   // key -> raw value
  std::map<std::string, CLI::Option*> options;  // key -> flag, for count()
};

template <class T>
int run_train(const TrainArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  vdc::TrainConfig cfg;
  std::vector<std::string> inputs;
  if (!args.config_path.empty()) {
    cfg = vdc::TrainConfig::from_text(vdc::detail::slurp(args.config_path));
    inputs.push_back(args.config_path);
  }
  for (const auto& [flag, key] : kTrainFlagKeys) {
    (void)flag;
    if (args.options.at(key)->count() > 0) cfg.apply(key, args.values.at(key));
  }
  cfg.validate();

  const std::string train_manifest = (fs::path(args.data_dir) / "train.jsonl").string();
  const std::string valid_manifest = (fs::path(args.data_dir) / "valid.jsonl").string();
  inputs.push_back(train_manifest);
  inputs.push_back(valid_manifest);
  const auto train_set = vdc::load_dataset<T>(train_manifest, cfg.use_motion);
  const auto valid_set = vdc::load_dataset<T>(valid_manifest, cfg.use_motion);

  std::optional<vdc::Checkpoint<T>> resume;
  if (!args.resume_path.empty()) {
    resume = vdc::read_checkpoint<T>(args.resume_path);
    inputs.push_back(args.resume_path);
  }

  fs::create_directories(args.out_dir);
  const std::string log_path = (fs::path(args.out_dir) / "train_log.txt").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw vdc::DataError("cannot write training log: " + log_path);

  const vdc::TrainResult<T> result =
      vdc::train(cfg, train_set, valid_set, resume ? &*resume : nullptr, &log);
  log.close();

  const std::string ck_path = (fs::path(args.out_dir) / "checkpoint.vdcp").string();
  const std::string bytes = vdc::checkpoint_bytes(result.checkpoint);
  vdc::detail::spill(ck_path, bytes);

  write_run_manifest(args.out_dir, "train", kv_text_to_json(cfg.to_text()), cfg.seed, inputs,
                     {ck_path, log_path}, seconds_since(start), git_blob_sha1(bytes));
  std::cout << "train[" << variant_name(cfg) << "]: stopped by " << result.stop_reason
            << " at update " << result.checkpoint.update;
  if (result.checkpoint.has_best) {
    std::cout << "; best valid NLL " << vdc::format_double(result.checkpoint.best_valid_nll)
              << " at update " << result.checkpoint.best_update;
  }
  std::cout << "; checkpoint " << ck_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out_dir;
  std::size_t beam = 5;
  std::size_t max_len = 30;
  bool greedy = false;
  bool sample = false;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  bool dump_attention = false;
  bool show_attention = false;
};

template <class T>
int run_generate(const GenerateArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  if (args.greedy && args.sample) {
    throw vdc::ConfigError("choose at most one of --greedy and --sample");
  }
  if (args.split != "train" && args.split != "valid" && args.split != "test") {
    throw vdc::ConfigError("--split must be train, valid or test, got '" + args.split + "'");
  }

  const std::string ck_bytes = vdc::detail::slurp(args.checkpoint);
  const vdc::Checkpoint<T> ck = vdc::read_checkpoint<T>(args.checkpoint);
  const vdc::Decoder<T> dec(vdc::make_decoder_config(ck.config, ck.vocab.size(), ck.d_v));
  const vdc::ParamStore<T>& params = ck.has_best ? ck.best_params : ck.params;
  if (args.dump_attention && ck.config.context != vdc::ContextMode::kAttention) {
    throw vdc::ModeError("attention dump requires an attention-mode checkpoint");
  }

  const std::string manifest = (fs::path(args.data_dir) / (args.split + ".jsonl")).string();
  const auto data = vdc::load_dataset<T>(manifest, ck.config.use_motion);

  fs::create_directories(args.out_dir);
  const std::string captions_path = (fs::path(args.out_dir) / "captions.jsonl").string();
  std::ofstream captions(captions_path, std::ios::trunc);
  if (!captions) throw vdc::DataError("cannot write captions: " + captions_path);
  const fs::path attn_dir = fs::path(args.out_dir) / "attention";
  if (args.dump_attention) fs::create_directories(attn_dir);

  vdc::Rng sample_rng(args.seed);
  std::vector<std::string> outputs = {captions_path};
  for (const auto& video : data) {
    vdc::Hypothesis<T> hyp;
    if (args.greedy) {
      hyp = vdc::greedy_decode(dec, params, video.features, args.max_len);
    } else if (args.sample) {
      hyp = vdc::sample_decode(dec, params, video.features, args.max_len, args.temperature,
                               sample_rng);
    } else {
      hyp = vdc::beam_search(dec, params, video.features, args.beam, args.max_len).best;
    }
    json j;
    j["id"] = video.id;
    j["tokens"] = ck.vocab.decode(hyp.tokens);
    j["score"] = hyp.log_prob;
    captions << j.dump() << "\n";

    if (args.dump_attention || args.show_attention) {
      const auto alpha = vdc::capture_attention(dec, params, video.features, hyp.tokens);
      if (args.dump_attention) {
        const std::string csv_path = (attn_dir / (video.id + ".csv")).string();
        vdc::detail::spill(csv_path, vdc::attention_csv(ck.vocab, hyp.tokens, alpha));
        outputs.push_back(csv_path);
      }
      if (args.show_attention) {
        std::cout << video.id << "\n" << vdc::attention_bars(ck.vocab, hyp.tokens, alpha);
      }
    }
  }
  captions.close();

  json config;
  config["mode"] = args.greedy ? "greedy" : args.sample ? "sample" : "beam";
  config["beam"] = args.beam;
  config["max_len"] = args.max_len;
  config["temperature"] = args.temperature;
  config["split"] = args.split;
  config["variant"] = variant_name(ck.config);
  write_run_manifest(args.out_dir, "generate", config, args.sample ? args.seed : ck.config.seed,
                     {args.checkpoint, manifest}, outputs, seconds_since(start),
                     git_blob_sha1(ck_bytes));
  std::cout << "generate: wrote " << data.size() << " captions to " << captions_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string captions_path;
  std::string data_dir;
  std::string split = "test";
  std::string checkpoint;
  std::string out_dir;
  std::string run_id = "eval";
};

std::unordered_map<std::string, std::vector<std::string>> read_captions_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw vdc::DataError("cannot open captions file: " + path);
  std::unordered_map<std::string, std::vector<std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string id = j.at("id").get<std::string>();
      if (!out.emplace(id, j.at("tokens").get<std::vector<std::string>>()).second) {
        throw vdc::DataError("duplicate caption id: " + id);
      }
    } catch (const json::exception& e) {
      throw vdc::FormatError(path + ":" + std::to_string(lineno) + ": bad caption record: " +
                             e.what());
    }
  }
  return out;
}

template <class T>
int run_evaluate(const EvaluateArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  const std::string ck_bytes = vdc::detail::slurp(args.checkpoint);
  const vdc::Checkpoint<T> ck = vdc::read_checkpoint<T>(args.checkpoint);
  const vdc::Decoder<T> dec(vdc::make_decoder_config(ck.config, ck.vocab.size(), ck.d_v));
  const vdc::ParamStore<T>& params = ck.has_best ? ck.best_params : ck.params;

  const std::string manifest = (fs::path(args.data_dir) / (args.split + ".jsonl")).string();
  const auto data = vdc::load_dataset<T>(manifest, ck.config.use_motion);
  const auto captions = read_captions_file(args.captions_path);

  std::vector<std::string> missing;
  std::set<std::string> dataset_ids;
  for (const auto& video : data) {
    dataset_ids.insert(video.id);
    if (captions.find(video.id) == captions.end()) missing.push_back(video.id);
  }
  std::vector<std::string> extra;
  for (const auto& [id, toks] : captions) {
    if (dataset_ids.find(id) == dataset_ids.end()) extra.push_back(id);
  }
  std::sort(extra.begin(), extra.end());
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "caption ids do not match dataset";
    const auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s;
    };
    if (!missing.empty()) msg += "; missing: [" + join(missing) + "]";
    if (!extra.empty()) msg += "; extra: [" + join(extra) + "]";
    throw IdMismatchError(msg);
  }

  // String-level metrics keep OOV reference tokens; perplexity maps them
  // to <unk> and reports how many were mapped.
  std::vector<std::vector<std::string>> cands;
  std::vector<std::vector<std::vector<std::string>>> refs;
  std::vector<vdc::TrainExample<T>> ppl_data;
  std::size_t oov_mapped = 0;
  for (const auto& video : data) {
    cands.push_back(captions.at(video.id));
    refs.push_back(video.captions);
    for (const auto& caption : video.captions) {
      for (const auto& tok : caption) {
        if (!ck.vocab.contains(tok)) ++oov_mapped;
      }
      ppl_data.push_back({video.features, ck.vocab.encode(caption)});
    }
  }

  vdc::EvalReport report;
  report.bleu_4 = vdc::bleu(cands, refs, 4);
  const vdc::CiderScores cs = vdc::cider_scores(cands, refs);
  report.cider = cs.corpus;
  report.perplexity = vdc::perplexity(dec, params, ppl_data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    report.videos.push_back({data[i].id, cs.per_video[i]});
  }
  report.validate();

  const std::string mode = variant_name(ck.config);
  const std::string block =
      vdc::report_block(report, args.run_id, mode) + "oov_mapped = " + std::to_string(oov_mapped) +
      "\n";
  fs::create_directories(args.out_dir);
  const std::string block_path = (fs::path(args.out_dir) / "report.txt").string();
  const std::string line_path = (fs::path(args.out_dir) / "report.tsv").string();
  vdc::detail::spill(block_path, block);
  vdc::detail::spill(line_path, vdc::report_line(report, args.run_id, mode) + "\n");
  std::cout << block;

  write_run_manifest(args.out_dir, "evaluate", json{{"run_id", args.run_id}, {"split", args.split}},
                     ck.config.seed, {args.captions_path, manifest, args.checkpoint},
                     {block_path, line_path}, seconds_since(start), git_blob_sha1(ck_bytes));
  return kOk;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradCheckArgs {
  std::size_t d_emb = 8;
  std::size_t d_h = 10;
  std::size_t d_v = 12;
  std::size_t d_a = 8;
  std::size_t d_p = 8;
  std::size_t n_slots = 5;
  std::size_t vocab = 20;
  std::size_t caption_len = 4;
  std::string context = "attention";
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double threshold = 1e-4;
  std::size_t max_coords = 0;  // 0 = every coordinate
  std::string out_dir = ".";
  bool corrupt = false;
};

// The gradient check always runs in 64-bit with extended-precision finite
// differences; VDC_PRECISION only selects the working type of the
// pipeline commands.
int run_gradcheck(const GradCheckArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  if (args.caption_len == 0) throw vdc::ConfigError("caption length must be >= 1");
  vdc::DecoderConfig dcfg;
  dcfg.vocab_size = args.vocab;
  dcfg.d_emb = args.d_emb;
  dcfg.d_h = args.d_h;
  dcfg.d_v = args.d_v;
  dcfg.d_a = args.d_a;
  dcfg.d_p = args.d_p;
  if (args.context == "mean") {
    dcfg.context = vdc::ContextMode::kMean;
  } else if (args.context == "attention") {
    dcfg.context = vdc::ContextMode::kAttention;
  } else {
    throw vdc::ConfigError("--context must be mean or attention, got '" + args.context + "'");
  }

  vdc::Rng rng(args.seed);
  vdc::ParamStore<double> params = vdc::Decoder<double>(dcfg).init_params(rng);
  vdc::Tensor<double> feats({args.n_slots, args.d_v});
  for (double& x : feats.data) x = rng.uniform(-1.0, 1.0);
  std::vector<std::size_t> target;
  for (std::size_t i = 0; i + 1 < args.caption_len; ++i) {
    target.push_back(3 + static_cast<std::size_t>(rng.below(args.vocab - 3)));
  }
  target.push_back(vdc::Vocab::kEos);

  const bool corrupt = args.corrupt;
  const auto build = [&](auto& g, const auto& bp) {
    using S = typename std::decay_t<decltype(g)>::value_type;
    const vdc::Decoder<S> dec(dcfg);
    auto loss = dec.caption_loss(g, bp, g.constant(vdc::cast_tensor<S>(feats)), target);
    if (corrupt) {
      // Negative-control fixture: skew only the finite-difference path so
      // the analytic gradient no longer matches what is being probed.
      if constexpr (std::is_same_v<S, long double>) {
        const vdc::Shape shape = g.value(loss).shape;
        vdc::Tensor<S> scale(shape);
        for (auto& x : scale.data) x = static_cast<S>(1.001);
        loss = g.mul(loss, g.constant(scale));
      }
    }
    return loss;
  };

  vdc::GradCheckOptions opts;
  opts.eps = args.eps;
  opts.max_coords = args.max_coords;
  opts.seed = args.seed;
  opts.high_precision = true;
  const vdc::GradCheckReport report = vdc::grad_check(params, build, opts);

  std::string text;
  text += "model: " + args.context + ", d_emb=" + std::to_string(args.d_emb) + ", d_h=" +
          std::to_string(args.d_h) + ", d_v=" + std::to_string(args.d_v) + ", n=" +
          std::to_string(args.n_slots) + ", vocab=" + std::to_string(args.vocab) + ", len=" +
          std::to_string(args.caption_len) + "\n";
  for (const auto& p : report.per_param) {
    text += "param " + p.name + ": checked " + std::to_string(p.checked) + ", max rel err " +
            vdc::format_double(p.max_rel_err) + "\n";
  }
  text += "worst: " + report.worst_param + "[" + std::to_string(report.worst_coord) +
          "] analytic " + vdc::format_double(report.worst_analytic) + " numeric " +
          vdc::format_double(report.worst_numeric) + "\n";
  const bool pass = report.max_rel_err < args.threshold;
  text += std::string("grad-check ") + (pass ? "PASS" : "FAIL") + ": max relative error " +
          vdc::format_double(report.max_rel_err) + (pass ? " < " : " >= ") +
          vdc::format_double(args.threshold) + " over " + std::to_string(report.checked) +
          " coordinates\n";
  std::cout << text;

  fs::create_directories(args.out_dir);
  const std::string report_path = (fs::path(args.out_dir) / "grad_check_report.txt").string();
  vdc::detail::spill(report_path, text);
  json config;
  config["context"] = args.context;
  config["d_emb"] = args.d_emb;
  config["d_h"] = args.d_h;
  config["d_v"] = args.d_v;
  config["d_a"] = args.d_a;
  config["d_p"] = args.d_p;
  config["n"] = args.n_slots;
  config["vocab"] = args.vocab;
  config["caption_len"] = args.caption_len;
  config["eps"] = args.eps;
  config["threshold"] = args.threshold;
  config["corrupt_gradient"] = args.corrupt;
  write_run_manifest(args.out_dir, "grad-check", config, args.seed, {}, {report_path},
                     seconds_since(start), "");
  return pass ? kOk : kVerifyFail;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const IdMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIdErr;
  } catch (const vdc::ModeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kModeErr;
  } catch (const vdc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigErr;
  } catch (const vdc::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigErr;
  } catch (const vdc::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataErr;
  } catch (const vdc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataErr;
  } catch (const vdc::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataErr;
  } catch (const vdc::IndexError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataErr;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFail;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video description with temporal attention"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker cap (the current pipeline is sequential)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate the synthetic ordered-events corpus");
  synth->add_option("--config", synth_args.config_path, "key=value config file");
  synth->add_option("--out", synth_args.out_dir, "output dataset directory")->required();
  synth->add_option("--set", synth_args.sets, "override a config entry (key=value), repeatable");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a captioning model");
  train->add_option("--config", train_args.config_path, "key=value config file");
  train->add_option("--data", train_args.data_dir, "dataset directory (train.jsonl, valid.jsonl)")
      ->required();
  train->add_option("--out", train_args.out_dir, "output directory")->required();
  train->add_option("--resume", train_args.resume_path, "continue from this checkpoint");
  for (const auto& [flag, key] : kTrainFlagKeys) {
    train_args.options[key] =
        train->add_option(flag, train_args.values[key], std::string("config key ") + key);
  }

  GenerateArgs gen_args;
  auto* generate = app.add_subcommand("generate", "decode captions for a dataset split");
  generate->add_option("--checkpoint", gen_args.checkpoint, "trained checkpoint")->required();
  generate->add_option("--data", gen_args.data_dir, "dataset directory")->required();
  generate->add_option("--split", gen_args.split, "train, valid or test (default test)");
  generate->add_option("--out", gen_args.out_dir, "output directory")->required();
  generate->add_option("--beam", gen_args.beam, "beam width (default 5)");
  generate->add_option("--max-len", gen_args.max_len, "caption length cap (default 30)");
  generate->add_flag("--greedy", gen_args.greedy, "greedy argmax decoding");
  generate->add_flag("--sample", gen_args.sample, "multinomial sampling");
  generate->add_option("--temperature", gen_args.temperature, "sampling temperature (default 1)");
  generate->add_option("--seed", gen_args.seed, "sampling seed (default 1)");
  generate->add_flag("--dump-attention", gen_args.dump_attention,
                     "write per-video attention CSVs (attention mode only)");
  generate->add_flag("--show-attention", gen_args.show_attention,
                     "print attention bars to stdout (attention mode only)");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "score a captions file against a dataset");
  evaluate->add_option("--captions", eval_args.captions_path, "captions.jsonl from generate")
      ->required();
  evaluate->add_option("--data", eval_args.data_dir, "dataset directory")->required();
  evaluate->add_option("--split", eval_args.split, "train, valid or test (default test)");
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "checkpoint for perplexity")
      ->required();
  evaluate->add_option("--out", eval_args.out_dir, "output directory")->required();
  evaluate->add_option("--run-id", eval_args.run_id, "label for the report (default eval)");

  GradCheckArgs gc_args;
  auto* gradcheck = app.add_subcommand("grad-check", "finite-difference check of the full model");
  gradcheck->add_option("--d-emb", gc_args.d_emb, "embedding width (default 8)");
  gradcheck->add_option("--d-h", gc_args.d_h, "hidden width (default 10)");
  gradcheck->add_option("--d-v", gc_args.d_v, "feature width (default 12)");
  gradcheck->add_option("--d-a", gc_args.d_a, "attention width (default 8)");
  gradcheck->add_option("--d-p", gc_args.d_p, "output hidden width (default 8)");
  gradcheck->add_option("--n", gc_args.n_slots, "temporal slots (default 5)");
  gradcheck->add_option("--vocab", gc_args.vocab, "vocabulary size (default 20)");
  gradcheck->add_option("--len", gc_args.caption_len, "caption length (default 4)");
  gradcheck->add_option("--context", gc_args.context, "mean or attention (default attention)");
  gradcheck->add_option("--seed", gc_args.seed, "parameter/probe seed (default 1)");
  gradcheck->add_option("--eps", gc_args.eps, "finite-difference step (default 1e-5)");
  gradcheck->add_option("--threshold", gc_args.threshold, "pass bound (default 1e-4)");
  gradcheck->add_option("--max-coords", gc_args.max_coords,
                        "probe at most this many coordinates (0 = all)");
  gradcheck->add_option("--out", gc_args.out_dir, "report directory (default .)");
  gradcheck
      ->add_flag("--corrupt-gradient", gc_args.corrupt,
                 "test fixture: desynchronize the finite-difference path so the check must fail")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigErr;
  }

  return guarded([&]() -> int {
    const int bits = precision_bits();
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) {
      return bits == 32 ? run_train<float>(train_args) : run_train<double>(train_args);
    }
    if (generate->parsed()) {
      return bits == 32 ? run_generate<float>(gen_args) : run_generate<double>(gen_args);
    }
    if (evaluate->parsed()) {
      return bits == 32 ? run_evaluate<float>(eval_args) : run_evaluate<double>(eval_args);
    }
    if (gradcheck->parsed()) return run_gradcheck(gc_args);
    throw vdc::ConfigError("no command given");
  });
}
