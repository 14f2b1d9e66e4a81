#include <benchmark/benchmark.h>

#include "wsx/training.hpp"

namespace {

struct Fixture {
  wsx::Dataset data;
  wsx::Model model;
  wsx::Embedder embedder;
  std::vector<wsx::EncodedInput> inputs;

  Fixture(wsx::ScorerKind scorer, wsx::ProjectionKind projection)
      : model(config(scorer, projection)), embedder(wsx::Embedder::from_source(model.config().embedding)) {
    wsx::GeneratorConfig g;
    g.n_examples = 16;
    g.seed = 3;
    data = wsx::generate(g);
    inputs = wsx::encode_all(model, embedder, data);
  }

  static wsx::ModelConfig config(wsx::ScorerKind scorer, wsx::ProjectionKind projection) {
    wsx::ModelConfig c;
    c.scorer = scorer;
    c.projection.kind = projection;
    return c;
  }
};

void forward(benchmark::State& state, wsx::ScorerKind scorer, wsx::ProjectionKind projection) {
  Fixture f(scorer, projection);
  std::size_t i = 0;
  for (auto _ : state) {
    wsx::DropoutContext ctx;
    benchmark::DoNotOptimize(f.model.forward(f.inputs[i++ % f.inputs.size()], ctx));
  }
}

void train_step(benchmark::State& state, wsx::ScorerKind scorer, wsx::ProjectionKind projection) {
  Fixture f(scorer, projection);
  const auto weights = wsx::class_weights(f.data);
  std::size_t i = 0;
  for (auto _ : state) {
    const std::size_t k = i++ % f.inputs.size();
    wsx::DropoutContext ctx{true, k + 1, 0};
    const auto loss = wsx::example_loss(f.model, f.inputs[k], f.data[k], weights, 1.0, ctx);
    wsx::backward(loss.total);
  }
}

BENCHMARK_CAPTURE(forward, tascore_softmax, wsx::ScorerKind::tascore, wsx::ProjectionKind::softmax);
BENCHMARK_CAPTURE(forward, tascore_fusedmax, wsx::ScorerKind::tascore, wsx::ProjectionKind::fusedmax);
BENCHMARK_CAPTURE(forward, additive_softmax, wsx::ScorerKind::additive, wsx::ProjectionKind::softmax);
BENCHMARK_CAPTURE(train_step, tascore_softmax, wsx::ScorerKind::tascore, wsx::ProjectionKind::softmax);
BENCHMARK_CAPTURE(train_step, tascore_fusedmax, wsx::ScorerKind::tascore, wsx::ProjectionKind::fusedmax);
BENCHMARK_CAPTURE(train_step, additive_softmax, wsx::ScorerKind::additive, wsx::ProjectionKind::softmax);

}  // namespace
BENCHMARK_MAIN();
