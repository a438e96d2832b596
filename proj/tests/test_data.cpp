#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "vdc/data.hpp"
#include "vdc/errors.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("vdc_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("tokenizer follows the wordpunct rule") {
  CHECK(vdc::tokenize("A man plays.") == std::vector<std::string>{"A", "man", "plays", "."});
  CHECK(vdc::tokenize("don't") == std::vector<std::string>{"don", "'", "t"});
  CHECK(vdc::tokenize("") == std::vector<std::string>{});
  CHECK(vdc::tokenize("   ") == std::vector<std::string>{});
  CHECK(vdc::tokenize("a,b!!c") == std::vector<std::string>{"a", ",", "b", "!!", "c"});
  CHECK(vdc::tokenize("x_1 y2") == std::vector<std::string>{"x_1", "y2"});
  // no lowercasing
  CHECK(vdc::tokenize("The DOG") == std::vector<std::string>{"The", "DOG"});
}

TEST_CASE("tokenize of joined tokens is idempotent") {
  const std::vector<std::string> cases = {"A man plays.", "don't stop, now!", "e7 e13 e2"};
  for (const auto& text : cases) {
    const auto once = vdc::tokenize(text);
    CHECK(vdc::tokenize(vdc::join_tokens(once)) == once);
  }
}

TEST_CASE("vocab assigns dense indices in first-occurrence order") {
  const auto v = vdc::Vocab::build({{"a", "b"}, {"b"}});
  CHECK(v.size() == 5);  // 2 distinct + 3 reserved
  CHECK(v.token(vdc::Vocab::kPad) == "<pad>");
  CHECK(v.token(vdc::Vocab::kEos) == "<eos>");
  CHECK(v.token(vdc::Vocab::kUnk) == "<unk>");
  CHECK(v.token(3) == "a");
  CHECK(v.token(4) == "b");
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v.index_or_unk(v.token(i)) == i);
  }
  REQUIRE_THROWS_AS(v.token(5), vdc::IndexError);

  const auto v2 = vdc::Vocab::build({{"a", "b"}, {"b"}});
  CHECK(v == v2);
  // frequency does not affect inclusion: a rare token still gets an index
  const auto v3 = vdc::Vocab::build({{"common", "common", "common", "rare"}});
  CHECK(v3.contains("rare"));
}

TEST_CASE("caption encoding appends eos and never emits pad") {
  const auto v = vdc::Vocab::build({{"a", "man", "plays", "."}});
  const auto ids = v.encode({"a", "man", "plays", "."});
  REQUIRE(ids.size() == 5);
  CHECK(ids.back() == vdc::Vocab::kEos);
  for (std::size_t id : ids) CHECK(id != vdc::Vocab::kPad);
  CHECK(v.decode(ids) == std::vector<std::string>{"a", "man", "plays", "."});

  // unknown tokens map to <unk>
  const auto with_oov = v.encode({"a", "robot"});
  CHECK(with_oov[1] == vdc::Vocab::kUnk);
}

TEST_CASE("vocab round trips through text") {
  const auto v = vdc::Vocab::build({{"alpha", "beta", "gamma"}});
  const auto back = vdc::Vocab::from_text(v.to_text());
  CHECK(v == back);
  REQUIRE_THROWS_AS(vdc::Vocab::from_text("just\nwords\n"), vdc::FormatError);
}

TEST_CASE("feature files round trip losslessly") {
  const auto dir = temp_dir("features");
  vdc::Tensor<float> t({3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.25f - 1.0f;
  const std::string path = (dir / "x.vtfc").string();
  vdc::write_features(path, t);
  const auto back = vdc::read_features(path);
  REQUIRE(back.shape == t.shape);
  REQUIRE(std::memcmp(back.data.data(), t.data.data(), t.size() * sizeof(float)) == 0);
}

TEST_CASE("feature file size follows the header arithmetic") {
  const auto dir = temp_dir("fsize");
  vdc::Tensor<float> t = vdc::Tensor<float>::zeros({26, 1376});
  const std::string path = (dir / "big.vtfc").string();
  vdc::write_features(path, t);
  CHECK(fs::file_size(path) == 4 + 4 + 4 + 4 + 26 * 1376 * 4);
}

TEST_CASE("corrupt feature files raise format errors with byte offsets") {
  const auto dir = temp_dir("badfeat");
  vdc::Tensor<float> t = vdc::Tensor<float>::zeros({2, 3});
  const std::string path = (dir / "x.vtfc").string();
  vdc::write_features(path, t);

  SECTION("bad magic") {
    std::string bytes = file_bytes(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    try {
      vdc::read_features(path);
      FAIL("expected FormatError");
    } catch (const vdc::FormatError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
  }
  SECTION("truncated data") {
    std::string bytes = file_bytes(path);
    bytes.resize(bytes.size() - 5);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    REQUIRE_THROWS_AS(vdc::read_features(path), vdc::FormatError);
  }
  SECTION("trailing bytes") {
    std::string bytes = file_bytes(path) + "zz";
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    REQUIRE_THROWS_AS(vdc::read_features(path), vdc::FormatError);
  }
  SECTION("wrong version") {
    std::string bytes = file_bytes(path);
    bytes[4] = 9;
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    REQUIRE_THROWS_AS(vdc::read_features(path), vdc::FormatError);
  }
  SECTION("missing file") {
    REQUIRE_THROWS_AS(vdc::read_features((dir / "absent.vtfc").string()), vdc::DataError);
  }
}

TEST_CASE("descriptor grids round trip") {
  const auto dir = temp_dir("grids");
  vdc::Tensor<float> g({4, 3, 5, 2});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(i % 11) - 5.0f;
  const std::string path = (dir / "g.vdgr").string();
  vdc::write_grid(path, g);
  const auto back = vdc::read_grid(path);
  REQUIRE(back.shape == g.shape);
  REQUIRE(std::memcmp(back.data.data(), g.data.data(), g.size() * sizeof(float)) == 0);
  CHECK(fs::file_size(path) == 4 + 4 + 16 + g.size() * 4);
}

TEST_CASE("manifests round trip and validate") {
  const auto dir = temp_dir("manifest");
  std::vector<vdc::VideoRecord> recs(2);
  recs[0] = {"vid0", "features/vid0.vtfc", "features/vid0.motion.vtfc", {"a man plays.", "a man"}};
  recs[1] = {"vid1", "features/vid1.vtfc", "", {"the dog runs"}};
  const std::string path = (dir / "m.jsonl").string();
  vdc::write_manifest(path, recs);
  const auto back = vdc::read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "vid0");
  CHECK(back[0].motion == "features/vid0.motion.vtfc");
  CHECK(back[0].captions.size() == 2);
  CHECK(back[1].motion.empty());

  std::ofstream(path, std::ios::trunc) << "{\"id\": \"x\"}\n";
  REQUIRE_THROWS_AS(vdc::read_manifest(path), vdc::FormatError);
  std::ofstream(path, std::ios::trunc) << "not json\n";
  REQUIRE_THROWS_AS(vdc::read_manifest(path), vdc::FormatError);
}

TEST_CASE("synth config validation") {
  vdc::SynthConfig cfg;
  cfg.max_events = cfg.n_slots + 1;
  REQUIRE_THROWS_AS(vdc::synth_generate(cfg), vdc::ContractError);
  cfg = {};
  cfg.min_events = 3;
  cfg.max_events = 2;
  REQUIRE_THROWS_AS(vdc::synth_generate(cfg), vdc::ContractError);
  cfg = {};
  cfg.distractor_prob = 1.5;
  REQUIRE_THROWS_AS(vdc::synth_generate(cfg), vdc::ContractError);
}

TEST_CASE("noise-free synth slots are exact one-hot prototypes") {
  vdc::SynthConfig cfg;
  cfg.noise = 0.0;
  cfg.distractor_prob = 0.0;
  cfg.pos_dims = 0;
  cfg.with_motion = false;
  cfg.n_train = 5;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  const auto data = vdc::synth_generate(cfg);
  for (const auto& v : data.train) {
    REQUIRE(v.appearance.shape == vdc::Shape{cfg.n_slots, cfg.event_vocab});
    const auto words = vdc::tokenize(v.caption);
    REQUIRE(words.size() == v.event_slots.size() + 1);
    REQUIRE(words[0] == "video");
    for (std::size_t i = 0; i < v.event_slots.size(); ++i) {
      const std::size_t slot = v.event_slots[i];
      const std::size_t event = std::stoul(words[i + 1].substr(1));
      for (std::size_t j = 0; j < cfg.event_vocab; ++j) {
        CHECK(v.appearance.at2(slot, j) == (j == event ? 1.0f : 0.0f));
      }
    }
    // non-event slots are exactly zero
    std::vector<char> is_event(cfg.n_slots, 0);
    for (std::size_t s : v.event_slots) is_event[s] = 1;
    for (std::size_t s = 0; s < cfg.n_slots; ++s) {
      if (is_event[s]) continue;
      for (std::size_t j = 0; j < cfg.event_vocab; ++j) CHECK(v.appearance.at2(s, j) == 0.0f);
    }
  }
}

TEST_CASE("synth event slots are ascending and caption order matches") {
  vdc::SynthConfig cfg;
  cfg.n_train = 30;
  cfg.n_valid = 3;
  cfg.n_test = 3;
  const auto data = vdc::synth_generate(cfg);
  std::size_t k_min = 99, k_max = 0;
  for (const auto& v : data.train) {
    REQUIRE(std::is_sorted(v.event_slots.begin(), v.event_slots.end()));
    REQUIRE(std::adjacent_find(v.event_slots.begin(), v.event_slots.end()) == v.event_slots.end());
    k_min = std::min(k_min, v.event_slots.size());
    k_max = std::max(k_max, v.event_slots.size());
    const auto words = vdc::tokenize(v.caption);
    REQUIRE(words.size() == v.event_slots.size() + 1);
    // event words are distinct
    std::set<std::string> uniq(words.begin() + 1, words.end());
    REQUIRE(uniq.size() == words.size() - 1);
  }
  CHECK(k_min >= cfg.min_events);
  CHECK(k_max <= cfg.max_events);
}

TEST_CASE("synth positional channels are clean and shared across slots") {
  vdc::SynthConfig cfg;
  cfg.n_train = 4;
  cfg.n_valid = 1;
  cfg.n_test = 1;
  const auto data = vdc::synth_generate(cfg);
  const auto& a = data.train[0].appearance;
  const auto& b = data.train[1].appearance;
  REQUIRE(a.shape == vdc::Shape{cfg.n_slots, cfg.event_vocab + cfg.pos_dims});
  for (std::size_t s = 0; s < cfg.n_slots; ++s) {
    for (std::size_t j = 0; j < cfg.pos_dims; ++j) {
      // identical across videos, i.e. a pure function of the slot index
      CHECK(a.at2(s, cfg.event_vocab + j) == b.at2(s, cfg.event_vocab + j));
    }
    CHECK(a.at2(s, cfg.event_vocab) ==
          static_cast<float>(static_cast<double>(s) / static_cast<double>(cfg.n_slots - 1)));
  }
}

TEST_CASE("every-slot-an-event case yields a bijection") {
  vdc::SynthConfig cfg;
  cfg.event_vocab = 8;
  cfg.n_slots = 6;
  cfg.min_events = 6;
  cfg.max_events = 6;
  cfg.n_train = 10;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  const auto data = vdc::synth_generate(cfg);
  for (const auto& v : data.train) {
    REQUIRE(v.event_slots.size() == cfg.n_slots);
    for (std::size_t i = 0; i < cfg.n_slots; ++i) REQUIRE(v.event_slots[i] == i);
  }
}

TEST_CASE("same seed regenerates byte-identical corpora") {
  vdc::SynthConfig cfg;
  cfg.n_train = 8;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  const auto d1 = vdc::synth_generate(cfg);
  const auto d2 = vdc::synth_generate(cfg);
  REQUIRE(d1.train.size() == d2.train.size());
  for (std::size_t i = 0; i < d1.train.size(); ++i) {
    CHECK(d1.train[i].caption == d2.train[i].caption);
    REQUIRE(std::memcmp(d1.train[i].appearance.data.data(), d2.train[i].appearance.data.data(),
                        d1.train[i].appearance.size() * sizeof(float)) == 0);
    REQUIRE(std::memcmp(d1.train[i].motion.data.data(), d2.train[i].motion.data.data(),
                        d1.train[i].motion.size() * sizeof(float)) == 0);
  }
  vdc::SynthConfig other = cfg;
  other.seed = 8;
  const auto d3 = vdc::synth_generate(other);
  CHECK(std::memcmp(d1.train[0].appearance.data.data(), d3.train[0].appearance.data.data(),
                    d1.train[0].appearance.size() * sizeof(float)) != 0);
}

TEST_CASE("synth splits are disjoint by video id") {
  vdc::SynthConfig cfg;
  cfg.n_train = 5;
  cfg.n_valid = 5;
  cfg.n_test = 5;
  const auto data = vdc::synth_generate(cfg);
  std::set<std::string> ids;
  for (const auto* split : {&data.train, &data.valid, &data.test})
    for (const auto& v : *split) ids.insert(v.id);
  CHECK(ids.size() == 15);
}

TEST_CASE("written synth corpus loads back through the dataset reader") {
  const auto dir = temp_dir("synthio");
  vdc::SynthConfig cfg;
  cfg.n_train = 6;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  const auto data = vdc::synth_generate(cfg);
  vdc::synth_write(data, dir.string());

  for (const char* name : {"train.jsonl", "valid.jsonl", "test.jsonl"}) {
    CHECK(fs::exists(dir / name));
  }

  const auto loaded = vdc::load_dataset<double>((dir / "train.jsonl").string(), false);
  REQUIRE(loaded.size() == 6);
  CHECK(loaded[0].features.shape == vdc::Shape{cfg.n_slots, cfg.d_app()});
  CHECK(loaded[0].captions.size() == 1);
  CHECK(loaded[0].captions[0][0] == "video");

  const auto with_motion = vdc::load_dataset<double>((dir / "train.jsonl").string(), true);
  CHECK(with_motion[0].features.shape == vdc::Shape{cfg.n_slots, cfg.d_app() + cfg.d_motion});
  // appearance columns come first, then motion
  for (std::size_t j = 0; j < cfg.d_app(); ++j) {
    CHECK(with_motion[0].features.at2(3, j) == loaded[0].features.at2(3, j));
  }

  const auto align = vdc::read_alignment((dir / "test_alignment.jsonl").string());
  REQUIRE(align.size() == 2);
  CHECK(align.count(data.test[0].id) == 1);
  CHECK(align.at(data.test[0].id) == data.test[0].event_slots);
}

TEST_CASE("written synth corpus is byte-identical across runs") {
  const auto dir1 = temp_dir("synthbytes1");
  const auto dir2 = temp_dir("synthbytes2");
  vdc::SynthConfig cfg;
  cfg.n_train = 3;
  cfg.n_valid = 1;
  cfg.n_test = 1;
  vdc::synth_write(vdc::synth_generate(cfg), dir1.string());
  vdc::synth_write(vdc::synth_generate(cfg), dir2.string());
  for (const char* rel : {"train.jsonl", "features/tr00000.vtfc", "features/tr00000.motion.vtfc",
                          "test_alignment.jsonl"}) {
    CHECK(file_bytes(dir1 / rel) == file_bytes(dir2 / rel));
  }
}

TEST_CASE("motion-less dataset refuses motion requests") {
  const auto dir = temp_dir("nomotion");
  vdc::SynthConfig cfg;
  cfg.with_motion = false;
  cfg.n_train = 2;
  cfg.n_valid = 1;
  cfg.n_test = 1;
  vdc::synth_write(vdc::synth_generate(cfg), dir.string());
  REQUIRE_THROWS_AS(vdc::load_dataset<double>((dir / "train.jsonl").string(), true), vdc::DataError);
}
