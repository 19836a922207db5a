#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "c2f/checkpoint.hpp"
#include "c2f/evaluation.hpp"
#include "c2f/synthetic.hpp"
#include "support.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace c2f;
using namespace c2f::testing;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "c2f-test-checkpoint";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
}

struct Saved {
  RunConfig cfg;
  Vocabulary vocab;
  Model model;
  std::vector<RawExample> raw;
  std::string path;
};

Saved save_one(SelectorKind kind, const std::string& name) {
  Saved s;
  GeneratorConfig g;
  g.examples = 20;
  g.seed = 3;
  s.raw = raw_examples(generate_corpus(g));
  s.cfg.hidden = 7;
  s.cfg.embed = 5;
  s.cfg.selector_hidden = 4;
  s.cfg.selector = kind;
  s.cfg.k = 2;
  s.cfg.method = Method::reinforce;
  s.vocab = build_vocab(s.raw, 500, 10);
  s.model = Model::create(ModelShape::from(s.cfg, s.vocab.size()), 9, 0.3);
  s.path = temp_path(name);
  save_checkpoint(s.path, s.model, s.vocab, s.cfg, {{"epoch", 4}});
  return s;
}

}  // namespace

TEST_CASE("checkpoints round-trip parameters bit for bit") {
  for (auto kind : {SelectorKind::bow, SelectorKind::chunk, SelectorKind::cnn}) {
    const Saved s = save_one(kind, "rt-" + to_string(kind) + ".ckpt");
    const Checkpoint ck = load_checkpoint(s.path);
    CHECK(ck.config.hash_hex() == s.cfg.hash_hex());
    CHECK(ck.config.selector == kind);
    CHECK(ck.vocab.hash() == s.vocab.hash());
    CHECK(ck.vocab.size() == s.vocab.size());
    CHECK(ck.extra.at("epoch") == 4);
    REQUIRE(ck.model.params.size() == s.model.params.size());
    for (std::size_t i = 0; i < s.model.params.size(); ++i) {
      const Mat& a = s.model.params[i].value;
      const Mat& b = ck.model.params[i].value;
      CHECK(ck.model.params[i].name == s.model.params[i].name);
      REQUIRE(a.rows() == b.rows());
      REQUIRE(a.cols() == b.cols());
      CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
    }
  }
}

TEST_CASE("a reloaded model predicts exactly as the saved one") {
  Saved s = save_one(SelectorKind::bow, "predict.ckpt");
  Checkpoint ck = load_checkpoint(s.path);
  const auto data = prepare_all(s.raw, s.vocab, s.cfg.prepare_config());
  const EvalReport a = evaluate(s.model, data, s.vocab, s.cfg);
  const EvalReport b = evaluate(ck.model, data, ck.vocab, ck.config);
  CHECK(a.to_json() == b.to_json());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    CHECK(a.predictions[i].probability == b.predictions[i].probability);
    CHECK(a.predictions[i].answer.ids == b.predictions[i].answer.ids);
  }
}

TEST_CASE("saving twice gives identical bytes") {
  const Saved s = save_one(SelectorKind::cnn, "twice-a.ckpt");
  save_checkpoint(temp_path("twice-b.ckpt"), s.model, s.vocab, s.cfg, {{"epoch", 4}});
  CHECK(slurp(s.path) == slurp(temp_path("twice-b.ckpt")));
}

TEST_CASE("damaged checkpoints are rejected") {
  const Saved s = save_one(SelectorKind::bow, "good.ckpt");
  const std::string bytes = slurp(s.path);
  const std::string bad = temp_path("bad.ckpt");

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), CheckpointError);

  std::string magic = bytes;
  magic[0] ^= 0x5a;
  spit(bad, magic);
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  spit(bad, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  spit(bad, bytes.substr(0, 12));
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  spit(bad, bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  // change a config value inside the header without updating its hash
  std::string edited = bytes;
  const auto at = edited.find("\"model.hidden\":7");
  REQUIRE(at != std::string::npos);
  edited[at + std::strlen("\"model.hidden\":")] = '8';
  spit(bad, edited);
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  // same for a vocabulary word
  edited = bytes;
  const auto w = edited.find("\"words\":[\"");
  REQUIRE(w != std::string::npos);
  edited[w + std::strlen("\"words\":[\"")] ^= 0x01;
  spit(bad, edited);
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
}
