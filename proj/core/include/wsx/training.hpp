#pragma once

// Losses, optimizers, the joint training loop and threshold tuning.

#include "wsx/model.hpp"

#include <functional>
#include <optional>

namespace wsx {

/// Per-attribute, per-class loss weights.
struct ClassWeights {
  std::array<std::vector<double>, kNumAttributes> weights;
};

/// w_c = total / (n * max(count_c, 1)), rescaled to mean 1.
std::vector<double> class_weights(std::span<const std::size_t> counts);
ClassWeights class_weights(const Dataset& train);
ClassWeights uniform_class_weights();

/// Sum over attributes of -w[y] * log(max(p[y], 1e-12)).
Var classification_loss(const std::array<Var, kNumAttributes>& probs,
                        const std::array<std::size_t, kNumAttributes>& labels, const ClassWeights& weights);

/// Sum over attributes with a non-empty gold mask of KL(gold / |gold| || attention).
/// Missing or all-zero masks contribute nothing.
Var identification_loss(const std::array<std::optional<Mask>, kNumAttributes>& gold,
                        const std::array<Var, kNumAttributes>& attention);

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;  // sgd only
};

struct FusedmaxStar {
  bool enabled = false;
  double swap_fraction = 0.25;
};

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double lambda_id = 1.0;
  OptimizerConfig optimizer;
  FusedmaxStar fusedmax_star;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;

  void validate() const;
  /// 0-based epoch at which fusedmax takes over; epochs when disabled.
  std::size_t swap_epoch() const;
};

class Optimizer {
 public:
  Optimizer(ParamSet params, OptimizerConfig cfg, double learning_rate);
  /// Applies one update from the accumulated gradients.
  void step();
  std::size_t steps() const noexcept { return t_; }

 private:
  ParamSet params_;
  OptimizerConfig cfg_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Buffer> m_, v_;
};

struct LossTerms {
  Var total;
  Var classification;
  Var identification;
};

/// L = L_c + lambda * L_i for one example.
LossTerms example_loss(const Model& model, const EncodedInput& in, const DataPoint& dp, const ClassWeights& weights,
                       double lambda_id, DropoutContext& ctx);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss_c = 0.0;    // per-example means
  double loss_i = 0.0;
  ProjectionKind projection = ProjectionKind::softmax;

  std::string to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  ExtractionThresholds thresholds;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place. Thresholds are tuned on the span-labeled part of
/// `validation` when training ends under softmax; under fusedmax they are 0.
TrainResult train(Model& model, const Embedder& embedder, const Dataset& train_set, const Dataset& validation,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Per attribute: candidates are 0 and the midpoints between consecutive
/// distinct attention values; the smallest TF1 maximizer wins.
ExtractionThresholds tune_thresholds(const Model& model, std::span<const EncodedInput> inputs,
                                     const Dataset& validation);
ExtractionThresholds tune_thresholds(const Model& model, const Embedder& embedder, const Dataset& validation);

/// Threshold search over pooled (weight, gold) tokens of one attribute.
double best_threshold(std::span<const double> weights, std::span<const std::uint8_t> gold);

}  // namespace wsx
