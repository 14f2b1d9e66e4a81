#include "doctest.h"

#include "wsx/baseline.hpp"
#include "wsx/data.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace wsx;

namespace {

GeneratorConfig clean(std::size_t n, std::uint64_t seed = 3) {
  GeneratorConfig cfg;
  cfg.n_examples = n;
  cfg.label_noise_rates = {0.0, 0.0, 0.0};
  cfg.span_label_fraction = 1.0;
  cfg.seed = seed;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kRecord =
    R"({"id":"r1","utterances":[{"speaker":"DR","tokens":["now","the","plemax"]},{"speaker":"PT","tokens":["okay"]}],)"
    R"("medication":{"tokens":["plemax"],"start":2,"end":3},"labels":{"frequency":"None","route":"Pill","change":"Take"},)"
    R"("spans":{"route":[]}})";

}  // namespace

TEST_CASE("record parsing derives the flat sequence") {
  const DataPoint dp = parse_record(kRecord);
  CHECK(dp.tokens == std::vector<std::string>{"now", "the", "plemax", "okay"});
  CHECK(dp.speakers == std::vector<std::size_t>{0, 0, 0, 1});
  CHECK(dp.labels[1] == class_id(Attribute::route, "Pill"));
  CHECK_FALSE(dp.spans[0].has_value());
  CHECK(dp.spans[1].has_value());
  CHECK(dp.gold_mask(Attribute::route) == Mask{0, 0, 0, 0});
  CHECK(parse_record(to_record(dp)).spans == dp.spans);
}

TEST_CASE("record validation") {
  auto replace = [](std::string s, std::string_view from, std::string_view to) {
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  const std::string base = kRecord;
  CHECK_THROWS_WITH_AS(parse_record(replace(base, R"("route":"Pill")", R"("route":"Syrup")")),
                       doctest::Contains("Syrup"), Error);
  CHECK_THROWS_WITH_AS(parse_record(replace(base, R"("route":[])", R"("route":[[2,9]])")),
                       doctest::Contains("spans.route"), Error);
  CHECK_THROWS_WITH_AS(parse_record(replace(base, R"("id":"r1",)", R"("id":"r1","extra":1,)")),
                       doctest::Contains("extra"), Error);
  CHECK_THROWS_WITH_AS(parse_record(replace(base, R"("speaker":"PT")", R"("speaker":"XX")")),
                       doctest::Contains("XX"), Error);
  CHECK_THROWS_WITH_AS(parse_record(replace(base, R"("start":2)", R"("start":1)")),
                       doctest::Contains("medication"), Error);
  CHECK_THROWS_AS(parse_record("{not json"), Error);

  std::istringstream in(std::string(kRecord) + "\n\n{broken\n");
  CHECK_THROWS_WITH_AS(parse_dataset(in), doctest::Contains("line 3"), Error);
}

TEST_CASE("dataset round trip is the identity") {
  const Dataset data = generate(clean(50));
  const auto dir = std::filesystem::temp_directory_path() / "wsx_data_test";
  std::filesystem::create_directories(dir);
  write_dataset(data, dir / "a.jsonl");
  const Dataset back = parse_dataset(dir / "a.jsonl");
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].tokens == data[i].tokens);
    CHECK(back[i].speakers == data[i].speakers);
    CHECK(back[i].labels == data[i].labels);
    CHECK(back[i].spans == data[i].spans);
    CHECK(back[i].medication.tokens == data[i].medication.tokens);
  }
  write_dataset(back, dir / "b.jsonl");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("generator is deterministic under seed") {
  const auto a = generate(clean(100, 11));
  const auto b = generate(clean(100, 11));
  const auto c = generate(clean(100, 12));
  std::string sa, sb, sc;
  for (const auto& d : a) sa += to_record(d) + "\n";
  for (const auto& d : b) sb += to_record(d) + "\n";
  for (const auto& d : c) sc += to_record(d) + "\n";
  CHECK(sa == sb);
  CHECK(sa != sc);
}

TEST_CASE("clean generated masks realize the label's phrase") {
  GeneratorConfig cfg = clean(600);
  cfg.class_distribution = ClassDistribution::uniform;
  const auto data = generate(cfg);
  for (const auto& dp : data) {
    CHECK(dp.utterances.size() >= 3);
    CHECK(dp.utterances.size() <= 20);
    CHECK(dp.tokens.size() >= 12);
    for (Attribute a : kAttributes) {
      const auto k = static_cast<std::size_t>(a);
      REQUIRE(dp.spans[k].has_value());
      const auto& spans = *dp.spans[k];
      const auto& options = surface_phrases(a, dp.labels[k]);
      if (options.empty()) {
        CHECK(spans.empty());
        continue;
      }
      REQUIRE(spans.size() == 1);  // one contiguous span
      const auto [b, e] = spans[0];
      const std::vector<std::string> phrase(dp.tokens.begin() + long(b), dp.tokens.begin() + long(e));
      CHECK(std::find(options.begin(), options.end(), phrase) != options.end());
      const std::size_t len = e - b;
      const std::size_t max_len = a == Attribute::frequency ? 21 : a == Attribute::route ? 9 : 34;
      CHECK(len >= 1);
      CHECK(len <= max_len);
    }
  }
}

TEST_CASE("multi-medication share follows the configuration") {
  GeneratorConfig cfg = clean(1000);
  cfg.multi_medication_fraction = 0.77;
  const auto data = generate(cfg);
  std::size_t mm = 0;
  for (const auto& dp : data) mm += mentions_other_medication(dp);
  CHECK(double(mm) / 1000.0 == doctest::Approx(0.77).epsilon(0.05));
}

TEST_CASE("label noise moves labels but not text") {
  GeneratorConfig noisy = clean(2000, 5);
  noisy.label_noise_rates = {0.22, 0.36, 0.15};
  const auto a = generate(clean(2000, 5));
  const auto b = generate(noisy);
  std::array<std::size_t, 3> flips{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].spans == b[i].spans);
    for (std::size_t k = 0; k < 3; ++k) flips[k] += a[i].labels[k] != b[i].labels[k];
  }
  CHECK(flips[0] / 2000.0 == doctest::Approx(0.22).epsilon(0.15));
  CHECK(flips[1] / 2000.0 == doctest::Approx(0.36).epsilon(0.15));
  CHECK(flips[2] / 2000.0 == doctest::Approx(0.15).epsilon(0.15));
}

TEST_CASE("span label fraction") {
  GeneratorConfig cfg = clean(200);
  cfg.span_label_fraction = 0.25;
  const auto data = generate(cfg);
  std::size_t labeled = 0;
  for (const auto& dp : data) labeled += dp.has_span_labels();
  CHECK(labeled == 50);

  auto copy = generate(clean(200));
  limit_span_labels(copy, 30, 1);
  labeled = 0;
  for (const auto& dp : copy) labeled += dp.has_span_labels();
  CHECK(labeled == 30);
}

TEST_CASE("baseline recovers single-word route phrases") {
  GeneratorConfig cfg = clean(800);
  cfg.multi_medication_fraction = 0.0;
  cfg.class_distribution = ClassDistribution::uniform;
  const auto all = generate(cfg);
  const Lexicon lex = default_lexicon();
  Dataset subset;
  for (const auto& dp : all) {
    const auto& s = *dp.spans[1];
    if (s.size() != 1 || s[0].second - s[0].first != 1) continue;
    const auto& lexical = lex.phrases(Attribute::route, dp.labels[1]);
    if (std::find(lexical.begin(), lexical.end(), Phrase{dp.tokens[s[0].first]}) == lexical.end()) continue;
    subset.push_back(dp);
  }
  REQUIRE(subset.size() > 100);
  const auto preds = baseline_predictions(subset, lex);
  const auto report = evaluate_predictions(subset, preds, "baseline");
  CHECK(*report.attributes[1].tf1 == 1.0);
}

TEST_CASE("baseline finds something for every attribute on clean data") {
  const auto data = generate(clean(300));
  const auto report = evaluate_predictions(data, baseline_predictions(data, default_lexicon()), "baseline");
  for (const auto& a : report.attributes) CHECK(*a.tf1 > 0.0);
}

TEST_CASE("filler text never contains lexicon phrases") {
  GeneratorConfig cfg = clean(400);
  cfg.class_distribution = ClassDistribution::uniform;
  const auto data = generate(cfg);
  const Lexicon lex = default_lexicon();
  for (const auto& dp : data) {
    if (mentions_other_medication(dp)) continue;
    for (Attribute a : kAttributes) {
      const auto m = phrase_extract(dp.tokens, a, lex);
      if (!m.span) continue;
      const Mask gold = *dp.gold_mask(a);
      for (std::size_t i = m.span->first; i < m.span->second; ++i) CHECK(gold[i] == 1);
    }
  }
}

TEST_CASE("split sizes, disjointness and stratification") {
  GeneratorConfig cfg = clean(2000);
  const auto data = generate(cfg);
  const auto s = split(data, {0.8, 0.1, 0.1}, 4);
  CHECK(s.train.size() == 1600);
  CHECK(s.validation.size() == 200);
  CHECK(s.test.size() == 200);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const auto& dp : *part) CHECK(ids.insert(dp.id).second);
  CHECK(ids.size() == 2000);

  auto share = [](const Dataset& d) {
    std::map<std::size_t, double> m;
    for (const auto& dp : d) m[dp.labels[2]] += 1.0 / double(d.size());
    return m;
  };
  const auto global = share(data);
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    const auto local = share(*part);
    for (const auto& [c, p] : global) {
      const double q = local.count(c) ? local.at(c) : 0.0;
      CHECK(std::abs(q - p) <= 0.05);
    }
  }
  CHECK_THROWS_AS(split(data, {0.5, 0.3, 0.3}, 1), Error);
  CHECK_THROWS_AS(split(Dataset(data.begin(), data.begin() + 5), {0.9, 0.05, 0.05}, 1), Error);
}
