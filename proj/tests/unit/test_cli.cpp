#include "doctest.h"

#include "cli.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run wsx_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = wsx::cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("wsx_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// small generated corpus shared by the cases below
fs::path corpus(const fs::path& dir) {
  const Run r = wsx_run({"generate", "--out", (dir / "data").string(), "--n", "60", "--seed", "5",
                         "--train-span-labels", "12"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return dir / "data";
}

std::vector<std::string> tiny_model_flags() {
  return {"--embedding-dim", "8",  "--classifier-hidden", "12", "--tascore-dim", "8", "--tascore-ff", "8",
          "--tascore-head-hidden", "4"};
}

}  // namespace

TEST_CASE("cli: generate, train and evaluate end to end") {
  const fs::path dir = scratch("e2e");
  const fs::path data = corpus(dir);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) CHECK(fs::exists(data / f));

  std::vector<std::string> train{"train", "--train", (data / "train.jsonl").string(), "--val",
                                 (data / "val.jsonl").string(), "--out", (dir / "m.ckpt").string(),
                                 "--epochs", "4", "--projection", "softmax", "--fusedmax-star", "--seed", "4"};
  for (auto& f : tiny_model_flags()) train.push_back(f);
  const Run t = wsx_run(train);
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(dir / "m.ckpt"));
  CHECK(fs::exists(dir / "m.ckpt.manifest.json"));

  std::istringstream history(slurp(dir / "m.ckpt.history.jsonl"));
  std::string line;
  std::vector<json> records;
  while (std::getline(history, line)) records.push_back(json::parse(line));
  REQUIRE(records.size() == 4);
  CHECK(records[0]["epoch"] == 1);
  CHECK(records[2]["projection"] == "softmax");
  CHECK(records[3]["projection"] == "fusedmax");

  const Run e = wsx_run({"evaluate", "--data", (data / "test.jsonl").string(), "--model",
                         (dir / "m.ckpt").string(), "--out", (dir / "report.json").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const json report = json::parse(slurp(dir / "report.json"));
  CHECK(report["examples"] == 6);
  for (const char* m : {"tf1", "lcsf1", "classification_f1"}) {
    const double v = report["macro"][m];
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("cli: oracle predictions score perfectly") {
  const fs::path dir = scratch("oracle");
  const fs::path data = corpus(dir);
  const Run r = wsx_run({"evaluate", "--data", (data / "test.jsonl").string(), "--out", (dir / "o.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = json::parse(slurp(dir / "o.json"));
  for (const char* m : {"tf1", "lcsf1", "classification_f1"}) CHECK(report["macro"][m] == 1.0);
}

TEST_CASE("cli: manifest replay reproduces the report") {
  const fs::path dir = scratch("replay");
  const fs::path data = corpus(dir);
  const Run first = wsx_run({"baseline", "--data", (data / "test.jsonl").string(), "--out",
                             (dir / "a.json").string()});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  const fs::path manifest = dir / "a.json.manifest.json";
  REQUIRE(fs::exists(manifest));
  const json m = json::parse(slurp(manifest));
  CHECK(m["command"] == "baseline");
  CHECK(m["options"].contains("data"));

  const Run again = wsx_run({"--manifest", manifest.string(), "--out", (dir / "b.json").string()});
  REQUIRE_MESSAGE(again.code == 0, again.err);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

  // the same holds for generation: identical seeds give identical bytes
  const Run regen = wsx_run({"--manifest", (data / "manifest.json").string(), "--out", (dir / "again").string()});
  REQUIRE_MESSAGE(regen.code == 0, regen.err);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) CHECK(slurp(data / f) == slurp(dir / "again" / f));
}

TEST_CASE("cli: seed falls back to the environment") {
  const fs::path dir = scratch("envseed");
  REQUIRE(wsx_run({"generate", "--out", (dir / "a").string(), "--n", "20", "--seed", "11"}).code == 0);
  ::setenv("WSX_SEED", "11", 1);
  const Run r = wsx_run({"generate", "--out", (dir / "b").string(), "--n", "20"});
  ::unsetenv("WSX_SEED");
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "a" / "train.jsonl") == slurp(dir / "b" / "train.jsonl"));
}

TEST_CASE("cli: exit codes") {
  CHECK(wsx_run({}).code == 2);
  CHECK(wsx_run({"frobnicate"}).code == 2);
  CHECK(wsx_run({"evaluate", "--no-such-flag"}).code == 2);
  CHECK(wsx_run({"generate", "--out", "x", "--class-distribution", "zipf"}).code == 2);
  CHECK(wsx_run({"--help"}).code == 0);
  CHECK(wsx_run({"train", "--help"}).code == 0);

  const Run missing = wsx_run({"evaluate", "--data", "/nonexistent/test.jsonl", "--out", "/tmp/x.json"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);

  const fs::path dir = scratch("codes");
  const fs::path data = corpus(dir);
  const Run bad_ckpt = wsx_run({"evaluate", "--data", (data / "test.jsonl").string(), "--model",
                                (dir / "nope.ckpt").string(), "--out", (dir / "r.json").string()});
  CHECK(bad_ckpt.code == 1);
}

TEST_CASE("cli: extract writes tagged text and a sidecar") {
  const fs::path dir = scratch("extract");
  const fs::path data = corpus(dir);
  const Run r = wsx_run({"extract", "--data", (data / "test.jsonl").string(), "--model", "oracle", "--out",
                         (dir / "ann.txt").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string text = slurp(dir / "ann.txt");
  CHECK(text.rfind("# ", 0) == 0);
  CHECK(text.find("[/") != std::string::npos);

  std::istringstream side(slurp(dir / "ann.txt.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(side, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("id"));
    for (const char* a : {"frequency", "route", "change"}) {
      const auto& e = j["attributes"][a];
      CHECK(e["spans"].size() == e["text"].size());
    }
    ++n;
  }
  CHECK(n == 6);
}
