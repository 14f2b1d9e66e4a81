#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "wsx/baseline.hpp"
#include "wsx/checkpoint.hpp"
#include "wsx/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>

using namespace wsx;
using oracle::Vec;

int wsx_acceptance_cases_run = 0;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void log_line(const std::string& s) { std::cout << "  " << s << std::endl; }

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

Vec random_vec(std::size_t n, std::mt19937_64& rng, double scale = 3.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vec v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : t.values()) x = n(rng);
  return t;
}

// The sort-and-threshold definition, written out independently.
Vec simplex_by_definition(const Vec& v) {
  Vec u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    cum += u[r];
    const double t = (cum - 1.0) / double(r + 1);
    if (u[r] - t > 0.0) tau = t;
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

// Support and segment structure survive a +-h nudge of every coordinate.
bool generic_point(const Vec& s, const ProjectionConfig& cfg, double h) {
  FusedmaxState base;
  fusedmax_project(s, cfg, &base);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (double sign : {-1.0, 1.0}) {
      Vec p = s;
      p[i] += sign * h;
      FusedmaxState st;
      fusedmax_project(p, cfg, &st);
      if (st.support != base.support || st.segment_start != base.segment_start) return false;
    }
  }
  return true;
}

Mask random_mask(std::size_t len, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  Mask m(len);
  for (auto& x : m) x = b(rng);
  return m;
}

// ---- synthetic runs -------------------------------------------------------

struct Corpus {
  Dataset train, validation, test;
};

Corpus synthetic(std::uint64_t seed, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                 std::size_t span_labels) {
  GeneratorConfig g;
  g.n_examples = n_train + n_val + n_test;
  g.seed = seed;
  g.class_distribution = ClassDistribution::uniform;
  const double n = double(g.n_examples);
  DatasetSplits s = split(generate(g), {double(n_train) / n, double(n_val) / n, double(n_test) / n}, seed);
  limit_span_labels(s.train, span_labels, seed);
  return {std::move(s.train), std::move(s.validation), std::move(s.test)};
}

Dataset multi_medication_subset(const Dataset& data) {
  Dataset out;
  for (const auto& dp : data)
    if (mentions_other_medication(dp)) out.push_back(dp);
  return out;
}

struct Outcome {
  EvalReport test;
  EvalReport multi;
  TrainResult trained;
  double seconds = 0.0;
};

Outcome train_and_evaluate(const Corpus& c, ModelConfig mc, TrainConfig tc) {
  const auto t0 = Clock::now();
  Model model(mc);
  const Embedder emb = Embedder::from_source(mc.embedding);
  Outcome o;
  o.trained = train(model, emb, c.train, c.validation, tc);
  o.test = evaluate(model, emb, c.test, o.trained.thresholds, "model");
  o.multi = evaluate(model, emb, multi_medication_subset(c.test), o.trained.thresholds, "model-mm");
  o.seconds = seconds_since(t0);
  return o;
}

double mean_segments(const EvalReport& r) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& a : r.attributes)
    if (a.mean_segments) {
      total += *a.mean_segments;
      ++n;
    }
  return n ? total / double(n) : 0.0;
}

ModelConfig tiny_model(ScorerKind scorer, ProjectionKind projection, std::uint64_t seed) {
  ModelConfig c;
  c.scorer = scorer;
  c.projection.kind = projection;
  c.init_seed = seed;
  c.embedding.dim = 5;
  c.classifier_hidden = 6;
  c.classifier_dropout = 0.0;
  c.tascore.model_dim = 4;
  c.tascore.ff_dim = 4;
  c.tascore.head_hidden = 3;
  c.tascore.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("projection correctness") {
  ++wsx_acceptance_cases_run;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);

  double fused_worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec s = random_vec(1 + rng() % 8, rng);
    const double gamma = 0.5 + double(rng() % 4) * 0.5;
    const ProjectionConfig cfg{ProjectionKind::fusedmax, gamma, 1.0};
    fused_worst = std::max(fused_worst, oracle::linf(fusedmax_project(s, cfg), oracle::fusedmax_dual(s, gamma, 1.0)));
  }
  log_line("fusedmax vs projected-gradient oracle, 1000 vectors: max Linf " + fmt(fused_worst, 8));
  CHECK(fused_worst <= 1e-4);

  double simplex_worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec v = random_vec(1 + rng() % 32, rng);
    const Vec p = simplex_project(v);
    simplex_worst = std::max({simplex_worst, oracle::linf(p, simplex_by_definition(v)),
                              oracle::linf(p, oracle::simplex_penalty(v))});
  }
  log_line("simplex_project vs definition and quadratic penalty: max Linf " + fmt(simplex_worst, 12));
  CHECK(simplex_worst <= 1e-8);

  double mean_worst = 0.0, tv_worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec s = random_vec(1 + rng() % 64, rng);
    const double lambda = 0.05 + double(rng() % 300) / 100.0;
    const Vec y = tv_prox(s, lambda);
    const double ms = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(y.size());
    mean_worst = std::max(mean_worst, std::abs(ms - my));
  }
  for (int t = 0; t < 1000; ++t) {
    const Vec s = random_vec(2 + rng() % 3, rng);
    const double lambda = 0.1 + double(rng() % 200) / 100.0;
    tv_worst = std::max(tv_worst, oracle::linf(tv_prox(s, lambda), oracle::tv_active_set(s, lambda)));
  }
  log_line("tv_prox mean drift " + fmt(mean_worst, 14) + ", vs exact convex oracle on 2-4 points " +
           fmt(tv_worst, 12));
  CHECK(mean_worst <= 1e-10);
  CHECK(tv_worst <= 1e-6);

  const double secs = seconds_since(t0);
  log_line("runtime " + fmt(secs, 2) + " s (limit 30)");
  CHECK(secs < 30.0);
}

TEST_CASE("gradient correctness") {
  ++wsx_acceptance_cases_run;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const double h = 1e-5;

  // projections at generic points
  double soft_worst = 0.0, fused_worst = 0.0;
  int checked = 0, skipped = 0;
  while (checked < 100) {
    const Vec s = random_vec(2 + rng() % 7, rng);
    const Vec r = random_vec(s.size(), rng, 1.0);
    const ProjectionConfig fused{ProjectionKind::fusedmax, 0.5 + double(rng() % 4) * 0.5, 1.0};
    if (!generic_point(s, fused, h)) {
      ++skipped;
      continue;
    }
    ++checked;
    for (ProjectionKind kind : {ProjectionKind::softmax, ProjectionKind::fusedmax}) {
      ProjectionConfig c = fused;
      c.kind = kind;
      Var x = Var::parameter(Tensor::vector(s));
      backward(dot(project(x, c), Var::constant(Tensor::vector(r))));
      auto f = [&](const Vec& v) {
        const Vec w = kind == ProjectionKind::softmax ? softmax_project(v, c) : fusedmax_project(v, c);
        return std::inner_product(w.begin(), w.end(), r.begin(), 0.0);
      };
      const double e = oracle::rel_error(x.grad().values(), oracle::finite_diff(f, s, h));
      (kind == ProjectionKind::softmax ? soft_worst : fused_worst) = std::max(
          kind == ProjectionKind::softmax ? soft_worst : fused_worst, e);
    }
  }
  log_line("softmax: 100 points, max rel error " + fmt(soft_worst, 10));
  log_line("fusedmax composition: 100 generic points (" + std::to_string(skipped) +
           " non-generic draws skipped), max rel error " + fmt(fused_worst, 10));
  CHECK(soft_worst <= 1e-3);
  CHECK(fused_worst <= 1e-3);

  // scorers
  double add_worst = 0.0, tas_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    auto p = AdditiveScorerParams::init(3, 4, rng);
    ParamSet params;
    p.collect("a", params);
    const Var q = Var::constant(random_tensor({3}, rng));
    const Var k = Var::constant(random_tensor({2 + rng() % 5, 4}, rng));
    const Var r = Var::constant(random_tensor({k.value().shape()[0]}, rng));
    add_worst = std::max(add_worst, testing::check_params(params, [&] { return dot(additive_score(q, k, p), r); }).rel_error);
  }
  TAScoreConfig tc;
  tc.query_dim = 3;
  tc.key_dim = 4;
  tc.model_dim = 4;
  tc.ff_dim = 5;
  tc.head_hidden = 3;
  tc.dropout = 0.0;
  tc.max_len = 16;
  for (int t = 0; t < 100; ++t) {
    auto p = TAScoreParams::init(tc, rng);
    ParamSet params;
    p.collect("t", params);
    const Var q = Var::constant(random_tensor({3}, rng));
    const Var k = Var::constant(random_tensor({2 + rng() % 4, 4}, rng));
    const Var r = Var::constant(random_tensor({k.value().shape()[0]}, rng));
    DropoutContext ctx;
    tas_worst = std::max(tas_worst, testing::check_params(params, [&] { return dot(tascore(q, k, p, ctx), r); }).rel_error);
  }
  log_line("additive scorer: 100 points, max rel error " + fmt(add_worst, 10));
  log_line("tascore: 100 points, max rel error " + fmt(tas_worst, 10));
  CHECK(add_worst <= 1e-3);
  CHECK(tas_worst <= 1e-3);

  // full model loss, 25 points per scorer x projection pair
  GeneratorConfig g;
  g.n_examples = 60;
  g.seed = 31;
  g.multi_medication_fraction = 0.0;  // shorter texts keep the 100 checks quick
  const Dataset data = generate(g);
  const ClassWeights w = class_weights(data);
  const Embedder emb = Embedder::frozen_random(5, 3);
  double model_worst = 0.0;
  int model_points = 0;
  for (ScorerKind scorer : {ScorerKind::additive, ScorerKind::tascore}) {
    for (ProjectionKind proj : {ProjectionKind::softmax, ProjectionKind::fusedmax}) {
      for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Model model(tiny_model(scorer, proj, seed));
        const DataPoint& dp = data[(seed * 7) % data.size()];
        const EncodedInput in = model.encode(dp, emb);
        const auto r = testing::check_params(model.params(), [&] {
          DropoutContext ctx;
          return example_loss(model, in, dp, w, 1.0, ctx).total;
        });
        if (r.rel_error > 1e-3)
          log_line("  worst case: " + std::string(to_string(scorer)) + "+" + std::string(to_string(proj)) + " seed " +
                   std::to_string(seed) + " rel error " + fmt(r.rel_error, 8));
        model_worst = std::max(model_worst, r.rel_error);
        ++model_points;
      }
    }
  }
  log_line("full model loss: " + std::to_string(model_points) + " points, max rel error " + fmt(model_worst, 10));
  CHECK(model_worst <= 1e-3);

  const double secs = seconds_since(t0);
  log_line("runtime " + fmt(secs, 2) + " s (limit 120)");
  CHECK(secs < 120.0);
}

TEST_CASE("metric correctness") {
  ++wsx_acceptance_cases_run;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4242);
  int lcs_bad = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t len = 1 + rng() % 40;
    const double p = 0.2 + 0.6 * double(rng() % 100) / 100.0;
    const Mask a = random_mask(len, rng, p), b = random_mask(len, rng, p);
    if (lcs_length({a, b}) != oracle::lcs_brute(a, b)) ++lcs_bad;
  }
  log_line("lcs_length vs brute force: " + std::to_string(500 - lcs_bad) + "/500 agree");
  CHECK(lcs_bad == 0);

  int metric_bad = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n_pairs = 1 + rng() % 12;
    std::vector<MaskPair> pairs;
    std::vector<std::pair<oracle::Bits, oracle::Bits>> ref;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const std::size_t len = 1 + rng() % 30;
      MaskPair mp{random_mask(len, rng, 0.3), random_mask(len, rng, 0.3)};
      ref.emplace_back(mp.predicted, mp.gold);
      pairs.push_back(std::move(mp));
    }
    const std::size_t n_classes = 2 + rng() % 10;
    std::vector<std::size_t> preds(20 + rng() % 50), golds(preds.size());
    for (auto& x : preds) x = rng() % n_classes;
    for (auto& x : golds) x = rng() % n_classes;
    const bool ok = std::abs(token_f1(pairs) - oracle::token_f1_confusion(ref)) <= 1e-12 &&
                    std::abs(lcsf1(pairs) - oracle::lcsf1_reference(ref)) <= 1e-12 &&
                    std::abs(classification_f1(preds, golds, n_classes) -
                             oracle::macro_f1_confusion(preds, golds, n_classes)) <= 1e-12;
    if (!ok) ++metric_bad;
  }
  log_line("TF1/LCSF1/classification F1 vs confusion-matrix oracles: " + std::to_string(200 - metric_bad) +
           "/200 fixtures agree");
  CHECK(metric_bad == 0);

  const double secs = seconds_since(t0);
  log_line("runtime " + fmt(secs, 3) + " s (limit 10)");
  CHECK(secs < 10.0);
}

TEST_CASE("end-to-end synthetic run") {
  ++wsx_acceptance_cases_run;
  const auto t0 = Clock::now();
  const Corpus c = synthetic(7, 2000, 200, 200, 150);
  REQUIRE(c.train.size() == 2000);
  REQUIRE(c.validation.size() == 200);
  REQUIRE(c.test.size() == 200);

  ModelConfig mc;  // TAScore, softmax until the swap
  TrainConfig tc;  // 30 epochs, Adam 1e-3, lambda 1, batch 32
  tc.fusedmax_star.enabled = true;
  tc.seed = 7;
  const Outcome o = train_and_evaluate(c, mc, tc);
  const EvalReport base = evaluate_predictions(c.test, baseline_predictions(c.test, default_lexicon()), "baseline");

  std::cout << o.test.to_table() << base.to_table();
  const double tf1 = o.test.macro_tf1.value_or(0.0);
  const double lcs = o.test.macro_lcsf1.value_or(0.0);
  const double base_lcs = base.macro_lcsf1.value_or(0.0);
  const double secs = seconds_since(t0);
  log_line("TAScore+Fusedmax*: macro TF1 " + fmt(tf1) + " (need >= 0.70), macro LCSF1 " + fmt(lcs) +
           " (need >= 0.65)");
  log_line("baseline LCSF1 " + fmt(base_lcs) + ", margin " + fmt(100.0 * (lcs - base_lcs), 1) +
           " points (need >= 10)");
  log_line("runtime " + fmt(secs, 1) + " s (limit 600)");
  CHECK(tf1 >= 0.70);
  CHECK(lcs >= 0.65);
  CHECK(lcs - base_lcs >= 0.10);
  CHECK(secs <= 600.0);
}

TEST_CASE("structural contrasts") {
  ++wsx_acceptance_cases_run;
  constexpr std::size_t kTrain = 800, kVal = 100, kTest = 200, kEpochs = 15;
  double seg_fused = 0.0, seg_soft = 0.0, mm_tascore = 0.0, mm_additive = 0.0, tf1_150 = 0.0, tf1_0 = 0.0;
  const std::vector<std::uint64_t> seeds{11, 12, 13};
  for (std::uint64_t seed : seeds) {
    const Corpus labeled = synthetic(seed, kTrain, kVal, kTest, 150);
    const Corpus unlabeled = synthetic(seed, kTrain, kVal, kTest, 0);
    TrainConfig star;
    star.epochs = kEpochs;
    star.seed = seed;
    star.fusedmax_star.enabled = true;
    TrainConfig soft = star;
    soft.fusedmax_star.enabled = false;
    ModelConfig tas;
    ModelConfig add;
    add.scorer = ScorerKind::additive;

    const Outcome a = train_and_evaluate(labeled, tas, star);
    const Outcome b = train_and_evaluate(labeled, tas, soft);
    const Outcome d = train_and_evaluate(labeled, add, star);
    const Outcome z = train_and_evaluate(unlabeled, tas, star);

    seg_fused += mean_segments(a.test);
    seg_soft += mean_segments(b.test);
    mm_tascore += a.multi.macro_tf1.value_or(0.0);
    mm_additive += d.multi.macro_tf1.value_or(0.0);
    tf1_150 += a.test.macro_tf1.value_or(0.0);
    tf1_0 += z.test.macro_tf1.value_or(0.0);
    log_line("seed " + std::to_string(seed) + ": segments fusedmax* " + fmt(mean_segments(a.test), 3) +
             " softmax " + fmt(mean_segments(b.test), 3) + " | MM TF1 tascore " +
             fmt(a.multi.macro_tf1.value_or(0.0)) + " additive " + fmt(d.multi.macro_tf1.value_or(0.0)) +
             " | TF1 150 spans " + fmt(a.test.macro_tf1.value_or(0.0)) + " 0 spans " +
             fmt(z.test.macro_tf1.value_or(0.0)));
  }
  const double n = double(seeds.size());
  log_line("(a) mean segments fusedmax* " + fmt(seg_fused / n, 3) + " <= softmax " + fmt(seg_soft / n, 3));
  log_line("(b) multi-medication TF1 tascore " + fmt(mm_tascore / n) + " >= additive " + fmt(mm_additive / n));
  log_line("(c) TF1 with 150 span labels " + fmt(tf1_150 / n) + " >= with 0 " + fmt(tf1_0 / n));
  CHECK(seg_fused <= seg_soft);
  CHECK(mm_tascore >= mm_additive);
  CHECK(tf1_150 >= tf1_0);
}

TEST_CASE("determinism") {
  ++wsx_acceptance_cases_run;
  const Corpus c = synthetic(3, 240, 40, 40, 30);
  TrainConfig tc;
  tc.epochs = 4;
  tc.seed = 5;
  tc.fusedmax_star.enabled = true;

  auto run = [&] {
    Model model{ModelConfig{}};
    const Embedder emb = Embedder::from_source(model.config().embedding);
    std::vector<std::string> history;
    const TrainResult r = train(model, emb, c.train, c.validation, tc,
                                [&](const EpochRecord& e) { history.push_back(e.to_json()); });
    const EvalReport rep = evaluate(model, emb, c.test, r.thresholds, "model");
    return std::tuple{history, rep.to_json(), serialize_checkpoint(model, r.thresholds)};
  };
  const auto [h1, r1, c1] = run();
  const auto [h2, r2, c2] = run();
  log_line("history: " + std::to_string(h1.size()) + " epochs, " + (h1 == h2 ? "identical" : "DIFFERENT"));
  log_line("report: " + std::string(r1 == r2 ? "byte-identical" : "DIFFERENT"));
  log_line("checkpoint bytes: " + std::string(c1 == c2 ? "identical" : "DIFFERENT"));
  CHECK(h1.size() == 4);
  CHECK(h1 == h2);
  CHECK(r1 == r2);
  CHECK(c1 == c2);
}
