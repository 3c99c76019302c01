#include <doctest.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "rnntrack/dwi.hpp"
#include "rnntrack/model.hpp"
#include "rnntrack/streamline.hpp"
#include "test_util.hpp"

using namespace rnntrack;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "rnntrack");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

// Small phantom and a tiny model shared by the tests in this file.
struct Fixture {
  testutil::TempDir dir{"cli"};
  std::string data = (dir / "ph").string();
  std::string model = (dir / "model.bin").string();

  Fixture() {
    REQUIRE(run({"phantom", "gen", "--out", data, "--streamlines", "30"}).code == 0);
    const auto r = run({"train", "--data", data, "--out", model, "--epochs", "1", "--layers", "1", "--hidden", "8",
                        "--max-streamlines", "20"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

const std::vector<std::string> kSmallTrain{"--layers", "1", "--hidden", "8", "--max-streamlines", "20", "--batch", "8"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors and help") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"phantom", "gen"}).code == cli::kExitUsage);
  CHECK(run({"phantom", "gen", "--out", "x", "--noise", "-1"}).code == cli::kExitUsage);
  CHECK(run({"track", "--out", "x.trk"}).code == cli::kExitUsage);
  CHECK(run({"score", "--tracts", "x.trk"}).code == cli::kExitUsage);
  CHECK(run({"train", "--data", "x"}).code == cli::kExitUsage);
}

TEST_CASE("phantom gen") {
  testutil::TempDir dir("cli_ph");
  const auto a = (dir / "a").string(), b = (dir / "b").string(), c = (dir / "c").string();
  REQUIRE(run({"phantom", "gen", "--out", a, "--streamlines", "20", "--noise", "0"}).code == 0);
  REQUIRE(run({"phantom", "gen", "--out", b, "--streamlines", "20", "--noise", "0"}).code == 0);
  REQUIRE(run({"phantom", "gen", "--out", c, "--streamlines", "20", "--seed", "9"}).code == 0);
  for (const char* f : {"dwi.vol", "grad.txt", "mask.vol", "gt.trk", "bundle_straight.trk", "bundle_arc.trk", "rois.json"}) {
    CHECK_MESSAGE(testutil::read_bytes(dir / ("a/" + std::string(f))) == testutil::read_bytes(dir / ("b/" + std::string(f))), f);
  }
  CHECK(testutil::read_bytes(dir / "a/dwi.vol") != testutil::read_bytes(dir / "c/dwi.vol"));
  CHECK(load_tractogram(dir / "a/gt.trk").size() == 40);
  write(dir / "blocker", "x");
  CHECK(run({"phantom", "gen", "--out", (dir / "blocker").string()}).code == cli::kExitRuntime);
}

TEST_CASE("train") {
  Fixture& fx = fixture();
  testutil::TempDir dir("cli_train");
  const auto m = [&](const char* n) { return (dir / n).string(); };

  SUBCASE("epochs 0 saves the initialized model") {
    REQUIRE(run(with({"train", "--data", fx.data, "--out", m("zero.bin"), "--epochs", "0", "--model-seed", "5"}, kSmallTrain)).code == 0);
    const ModelFile mf = load_model(m("zero.bin"));
    CHECK(mf.config.input_size == 100);
    CHECK(mf.config.num_classes == 725);
    CHECK(mf.config.seed == 5);
    CHECK(mf.params == init_params(mf.config));
    REQUIRE(mf.optimizer.has_value());
    CHECK(mf.optimizer->epochs_completed == 0);
  }
  SUBCASE("deterministic, with metrics lines") {
    const auto args = with({"train", "--data", fx.data, "--epochs", "2"}, kSmallTrain);
    REQUIRE(run(with(args, {"--metrics", m("m1.jsonl"), "--out", m("a.bin")})).code == 0);
    REQUIRE(run(with(args, {"--metrics", m("m2.jsonl"), "--out", m("b.bin"), "--threads", "3"})).code == 0);
    CHECK(testutil::read_bytes(m("a.bin")) == testutil::read_bytes(m("b.bin")));
    CHECK(testutil::read_bytes(m("m1.jsonl")) == testutil::read_bytes(m("m2.jsonl")));
    std::ifstream f(m("m1.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(f, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("epoch") == ++n);
      for (const char* k : {"train_loss", "train_acc", "valid_loss"}) CHECK(j.at(k).is_number());
      CHECK(j.size() == 4);
    }
    CHECK(n == 2);
  }
  SUBCASE("resume equals an uninterrupted run") {
    REQUIRE(run(with({"train", "--data", fx.data, "--epochs", "3", "--out", m("full.bin")}, kSmallTrain)).code == 0);
    REQUIRE(run(with({"train", "--data", fx.data, "--epochs", "1", "--out", m("half.bin")}, kSmallTrain)).code == 0);
    const auto r = run(with({"train", "--data", fx.data, "--epochs", "2", "--resume", m("half.bin"), "--out", m("rest.bin")},
                            kSmallTrain));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(testutil::read_bytes(m("full.bin")) == testutil::read_bytes(m("rest.bin")));
  }
  SUBCASE("config file with flag precedence") {
    write(dir / "cfg.json", R"({"train": {"epochs": 1, "learning_rate": 0.01}, "model": {"hidden_size": 6}})");
    REQUIRE(run(with({"train", "--data", fx.data, "--config", m("cfg.json"), "--out", m("c1.bin")}, kSmallTrain)).code == 0);
    ModelFile mf = load_model(m("c1.bin"));
    CHECK(mf.config.hidden_size == 8);
    CHECK(mf.optimizer->epochs_completed == 1);
    REQUIRE(run({"train", "--data", fx.data, "--config", m("cfg.json"), "--out", m("c2.bin"), "--epochs", "0",
                 "--max-streamlines", "10"})
                .code == 0);
    mf = load_model(m("c2.bin"));
    CHECK(mf.config.hidden_size == 6);
    CHECK(mf.optimizer->epochs_completed == 0);
    write(dir / "bad.json", R"({"train": {"epochz": 1}})");
    const auto r = run({"train", "--data", fx.data, "--config", m("bad.json"), "--out", m("c3.bin")});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("epochz") != std::string::npos);
  }
  SUBCASE("runtime errors") {
    CHECK(run({"train", "--data", m("nowhere"), "--out", m("x.bin")}).code == cli::kExitRuntime);
    CHECK(run(with({"train", "--data", fx.data, "--out", m("x.bin"), "--split", "1.5"}, kSmallTrain)).code == cli::kExitRuntime);
    REQUIRE(run(with({"train", "--data", fx.data, "--out", m("z.bin"), "--epochs", "0"}, kSmallTrain)).code == 0);
  }
}

TEST_CASE("track") {
  Fixture& fx = fixture();
  testutil::TempDir dir("cli_track");
  const auto m = [&](const char* n) { return (dir / n).string(); };
  const std::vector<std::string> base{"track", "--model", fx.model, "--data", fx.data, "--seeds", "40", "--min-mm", "0"};

  SUBCASE("deterministic output is byte-identical and thread independent") {
    REQUIRE(run(with(base, {"--out", m("a.trk"), "--stats", m("a.json")})).code == 0);
    REQUIRE(run(with(base, {"--out", m("b.trk"), "--stats", m("b.json"), "--threads", "4"})).code == 0);
    CHECK(testutil::read_bytes(m("a.trk")) == testutil::read_bytes(m("b.trk")));
    CHECK(testutil::read_bytes(m("a.json")) == testutil::read_bytes(m("b.json")));
    std::ifstream f(m("a.json"));
    const auto j = nlohmann::json::parse(f);
    CHECK(j.at("kept").get<std::size_t>() + j.at("discarded_short").get<std::size_t>() +
              j.at("discarded_long").get<std::size_t>() ==
          40);
    CHECK(load_tractogram(m("a.trk")).size() == j.at("kept").get<std::size_t>());
  }
  SUBCASE("zero seeds gives an empty tractogram") {
    const auto r = run({"track", "--model", fx.model, "--data", fx.data, "--seeds", "0", "--out", m("e.trk")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(load_tractogram(m("e.trk")).size() == 0);
  }
  SUBCASE("ROI seeding") {
    const auto rois = (std::filesystem::path(fx.data) / "rois.json").string();
    REQUIRE(run(with(base, {"--out", m("r.trk"), "--seed-rois", rois, "--max-steps", "1"})).code == 0);
    // One step at most: every kept streamline starts inside a ROI voxel.
    for (const auto& s : load_tractogram(m("r.trk")).streamlines) CHECK(s.size() <= 2);
  }
  SUBCASE("probabilistic visitation map") {
    const auto r = run(with(base, {"--out", m("p.trk"), "--mode", "prob", "--repetitions", "3", "--visitation", m("v.vol")}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const DwiVolume v = load_volume(m("v.vol"));
    CHECK(v.channels == 1);
    for (float x : v.data) CHECK((x >= 0.0f && x <= 3.0f));
  }
  SUBCASE("prob-only flags in det mode are usage errors") {
    CHECK(run(with(base, {"--out", m("x.trk"), "--repetitions", "3", "--visitation", m("v.vol")})).code == cli::kExitUsage);
    CHECK(run(with(base, {"--out", m("x.trk"), "--mode", "prob", "--repetitions", "3"})).code == cli::kExitUsage);
    CHECK(run(with(base, {"--out", m("x.trk"), "--mode", "zig"})).code == cli::kExitUsage);
    CHECK(run(with(base, {"--out", m("x.trk"), "--entropy", "1,2"})).code == cli::kExitUsage);
  }
  SUBCASE("runtime errors") {
    CHECK(run({"track", "--model", m("missing.bin"), "--data", fx.data, "--out", m("x.trk")}).code == cli::kExitRuntime);
    CHECK(run(with(base, {"--out", m("x.trk"), "--alpha", "0"})).code == cli::kExitRuntime);
  }
}

TEST_CASE("score") {
  Fixture& fx = fixture();
  testutil::TempDir dir("cli_score");
  const auto gt = (std::filesystem::path(fx.data) / "gt.trk").string();
  const auto r = run({"score", "--tracts", gt, "--gold", fx.data, "--json", (dir / "s.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("VC") != std::string::npos);
  std::ifstream f(dir / "s.json");
  const auto j = nlohmann::json::parse(f);
  CHECK(j.at("VC") == 100.0);
  CHECK(j.at("OL") == 100.0);
  CHECK(j.at("OR") == 0.0);
  CHECK(j.at("VB") == 2);
  const auto again = run({"score", "--tracts", gt, "--gold", fx.data, "--json", (dir / "t.json").string()});
  CHECK(again.out == r.out);
  CHECK(testutil::read_bytes(dir / "s.json") == testutil::read_bytes(dir / "t.json"));
  save_tractogram(Tractogram{}, dir / "empty.trk");
  const auto e = run({"score", "--tracts", (dir / "empty.trk").string(), "--gold", fx.data});
  CHECK(e.code == 0);
  CHECK(e.out.find("empty") != std::string::npos);
  CHECK(run({"score", "--tracts", (dir / "none.trk").string(), "--gold", fx.data}).code == cli::kExitRuntime);
}
