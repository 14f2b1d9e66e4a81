#include "wsx/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace wsx {

namespace {

constexpr double kLogFloor = 1e-12;

std::size_t idx(Attribute a) { return static_cast<std::size_t>(a); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---- class weights --------------------------------------------------------

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw Error("class_weights: no classes");
  const double total = double(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) throw Error("class_weights: all class counts are zero");
  const double n = double(counts.size());
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) w[c] = total / (n * double(std::max<std::size_t>(counts[c], 1)));
  const double m = std::accumulate(w.begin(), w.end(), 0.0) / n;
  for (auto& x : w) x /= m;
  return w;
}

ClassWeights class_weights(const Dataset& train) {
  ClassWeights out;
  for (Attribute a : kAttributes) {
    std::vector<std::size_t> counts(class_count(a), 0);
    for (const auto& dp : train) ++counts.at(dp.labels[idx(a)]);
    out.weights[idx(a)] = class_weights(counts);
  }
  return out;
}

ClassWeights uniform_class_weights() {
  ClassWeights out;
  for (Attribute a : kAttributes) out.weights[idx(a)].assign(class_count(a), 1.0);
  return out;
}

// ---- losses ---------------------------------------------------------------

Var classification_loss(const std::array<Var, kNumAttributes>& probs,
                        const std::array<std::size_t, kNumAttributes>& labels, const ClassWeights& weights) {
  Var total;
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    const std::size_t y = labels[k];
    if (y >= probs[k].size() || y >= weights.weights[k].size()) {
      throw Error("classification_loss: label " + std::to_string(y) + " out of range for " +
                  std::string(to_string(kAttributes[k])));
    }
    Var term = scale(log_floor(select(probs[k], y), kLogFloor), -weights.weights[k][y]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Var identification_loss(const std::array<std::optional<Mask>, kNumAttributes>& gold,
                        const std::array<Var, kNumAttributes>& attention) {
  Var total = Var::constant(Tensor::scalar(0.0));
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    if (!gold[k]) continue;
    const Mask& e = *gold[k];
    if (e.size() != attention[k].size()) {
      throw Error("identification_loss: mask of length " + std::to_string(e.size()) + " for attention of length " +
                  std::to_string(attention[k].size()));
    }
    const double n = double(std::count(e.begin(), e.end(), std::uint8_t{1}));
    if (n == 0.0) continue;
    // KL(a || a_hat) = sum_j a_j log a_j - sum_j a_j log a_hat_j, with a uniform on the gold support
    Tensor a({e.size()}, 0.0);
    for (std::size_t j = 0; j < e.size(); ++j) a[j] = e[j] ? 1.0 / n : 0.0;
    const double neg_entropy = -std::log(n);
    Var cross = dot(Var::constant(std::move(a)), log_floor(attention[k], kLogFloor));
    total = add(total, sub(Var::constant(Tensor::scalar(neg_entropy)), cross));
  }
  return total;
}

// ---- config ---------------------------------------------------------------

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw Error("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("TrainConfig: epochs must be positive");
  if (batch_size == 0) throw Error("TrainConfig: batch size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("TrainConfig: learning rate must be >= 0");
  if (!(lambda_id >= 0.0) || !std::isfinite(lambda_id)) throw Error("TrainConfig: lambda must be >= 0");
  if (!(fusedmax_star.swap_fraction > 0.0 && fusedmax_star.swap_fraction < 1.0))
    throw Error("TrainConfig: swap fraction must be in (0,1)");
  if (optimizer.kind == OptimizerKind::adam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw Error("TrainConfig: adam betas must be in [0,1)");
    if (!(optimizer.epsilon > 0.0)) throw Error("TrainConfig: adam epsilon must be positive");
  }
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0))
    throw Error("TrainConfig: momentum must be in [0,1)");
}

std::size_t TrainConfig::swap_epoch() const {
  if (!fusedmax_star.enabled) return epochs;
  // ceil((1 - f) * E), guarded against 0.75 * 20 landing on 15.000000000000002
  const double x = (1.0 - fusedmax_star.swap_fraction) * double(epochs);
  const double r = std::round(x);
  return std::size_t(std::abs(x - r) < 1e-9 ? r : std::ceil(x));
}

// ---- optimizer ------------------------------------------------------------

Optimizer::Optimizer(ParamSet params, OptimizerConfig cfg, double learning_rate)
    : params_(std::move(params)), cfg_(cfg), lr_(learning_rate) {
  for (const auto& p : params_.items()) {
    m_.emplace_back(p.var.size(), 0.0);
    if (cfg_.kind == OptimizerKind::adam) v_.emplace_back(p.var.size(), 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  const auto& items = params_.items();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var p = items[i].var;
    const Tensor& g = p.node()->grad;
    const bool has = !g.empty();
    auto& w = p.mutable_value().values();
    auto& m = m_[i];
    if (cfg_.kind == OptimizerKind::adam) {
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = has ? g[j] : 0.0;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        // lr 0 must leave parameters bit-identical (w - 0 flips -0.0)
        if (lr_ != 0.0) w[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.epsilon);
      }
    } else {
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.momentum * m[j] + (has ? g[j] : 0.0);
        if (lr_ != 0.0) w[j] -= lr_ * m[j];
      }
    }
  }
}

// ---- training -------------------------------------------------------------

LossTerms example_loss(const Model& model, const EncodedInput& in, const DataPoint& dp, const ClassWeights& weights,
                       double lambda_id, DropoutContext& ctx) {
  const ModelOutput out = model.forward(in, ctx);
  std::array<std::optional<Mask>, kNumAttributes> gold;
  std::array<Var, kNumAttributes> attention;
  for (Attribute a : kAttributes) {
    gold[idx(a)] = dp.gold_mask(a);
    attention[idx(a)] = out.attention[idx(a)].weights;
  }
  LossTerms t;
  t.classification = classification_loss(out.probs, dp.labels, weights);
  t.identification = identification_loss(gold, attention);
  t.total = lambda_id == 0.0 ? t.classification : add(t.classification, scale(t.identification, lambda_id));
  return t;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss_c"] = loss_c;
  j["loss_i"] = loss_i;
  j["projection"] = std::string(wsx::to_string(projection));
  return j.dump();
}

TrainResult train(Model& model, const Embedder& embedder, const Dataset& train_set, const Dataset& validation,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty training set");
  const ClassWeights weights = class_weights(train_set);
  const auto inputs = encode_all(model, embedder, train_set);

  ProjectionConfig projection = model.config().projection;
  if (cfg.fusedmax_star.enabled) {
    projection.kind = ProjectionKind::softmax;
    model.set_projection(projection);
  }
  const std::size_t swap = cfg.swap_epoch();

  Optimizer opt(model.params(), cfg.optimizer, cfg.learning_rate);
  std::mt19937_64 order_rng(mix(cfg.seed));
  DropoutContext ctx{true, mix(cfg.seed ^ 0xd1b54a32d192ed03ULL), 0};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == swap) {
      projection.kind = ProjectionKind::fusedmax;
      model.set_projection(projection);
    }
    std::shuffle(order.begin(), order.end(), order_rng);
    double sum_c = 0.0, sum_i = 0.0;
    std::size_t batch = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const double inv = 1.0 / double(end - begin);
      model.params().zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t ex = order[i];
        const LossTerms t = example_loss(model, inputs[ex], train_set[ex], weights, cfg.lambda_id, ctx);
        const double lc = t.classification.value().item();
        const double li = t.identification.value().item();
        const double lt = t.total.value().item();
        if (!std::isfinite(lt)) {
          std::ostringstream msg;
          msg << "train: non-finite loss at epoch " << epoch + 1 << ", batch " << batch + 1 << " (example '"
              << train_set[ex].id << "', loss_c=" << lc << ", loss_i=" << li << ")";
          throw Error(msg.str());
        }
        backward(scale(t.total, inv));
        sum_c += lc;
        sum_i += li;
      }
      opt.step();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss_c = sum_c / double(train_set.size());
    rec.loss_i = sum_i / double(train_set.size());
    rec.projection = projection.kind;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.params().zero_grad();
  result.steps = opt.steps();

  const bool any_spans =
      std::any_of(validation.begin(), validation.end(), [](const DataPoint& dp) { return dp.has_span_labels(); });
  if (model.config().projection.kind == ProjectionKind::softmax && any_spans)
    result.thresholds = tune_thresholds(model, embedder, validation);
  return result;
}

// ---- thresholds -----------------------------------------------------------

double best_threshold(std::span<const double> weights, std::span<const std::uint8_t> gold) {
  if (weights.size() != gold.size()) throw Error("best_threshold: weights and gold differ in length");
  if (weights.empty()) return 0.0;
  std::vector<std::size_t> ord(weights.size());
  std::iota(ord.begin(), ord.end(), std::size_t{0});
  std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return weights[a] < weights[b]; });

  // distinct values with suffix counts of (tokens, gold tokens) at or above each value
  std::vector<double> values;
  std::vector<std::size_t> start;
  for (std::size_t i = 0; i < ord.size(); ++i) {
    if (values.empty() || weights[ord[i]] != values.back()) {
      values.push_back(weights[ord[i]]);
      start.push_back(i);
    }
  }
  std::vector<std::size_t> gold_suffix(ord.size() + 1, 0);
  for (std::size_t i = ord.size(); i-- > 0;) gold_suffix[i] = gold_suffix[i + 1] + (gold[ord[i]] ? 1 : 0);
  const std::size_t total_gold = gold_suffix[0];

  auto f1_from = [&](std::size_t group) {  // predict every token in groups >= group
    const std::size_t first = group < start.size() ? start[group] : ord.size();
    const std::size_t tp = gold_suffix[first];
    const std::size_t fp = (ord.size() - first) - tp;
    const std::size_t fn = total_gold - tp;
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
  };

  const std::size_t zero_group = values.front() > 0.0 ? 0 : 1;
  double best_gamma = 0.0;
  double best_f1 = f1_from(zero_group);
  for (std::size_t g = 1; g < values.size(); ++g) {
    const double a = values[g - 1], b = values[g];
    double mid = a + (b - a) / 2.0;
    if (!(mid < b)) mid = a;
    if (mid <= 0.0) continue;  // same prediction set as 0
    const double f = f1_from(g);
    if (f > best_f1) {
      best_f1 = f;
      best_gamma = mid;
    }
  }
  return best_gamma;
}

ExtractionThresholds tune_thresholds(const Model& model, std::span<const EncodedInput> inputs,
                                     const Dataset& validation) {
  ExtractionThresholds out;
  if (model.config().projection.kind == ProjectionKind::fusedmax) return out;
  if (validation.empty()) throw Error("tune_thresholds: empty validation set");
  if (inputs.size() != validation.size()) throw Error("tune_thresholds: inputs and validation differ in size");

  std::array<std::vector<double>, kNumAttributes> w;
  std::array<std::vector<std::uint8_t>, kNumAttributes> g;
  bool any = false;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    if (!validation[i].has_span_labels()) continue;
    DropoutContext ctx;
    const ModelOutput o = model.forward(inputs[i], ctx);
    for (Attribute a : kAttributes) {
      const auto gold = validation[i].gold_mask(a);
      if (!gold) continue;
      any = true;
      const auto& aw = o.attention[idx(a)].weights.value().values();
      w[idx(a)].insert(w[idx(a)].end(), aw.begin(), aw.end());
      g[idx(a)].insert(g[idx(a)].end(), gold->begin(), gold->end());
    }
  }
  if (!any) throw Error("tune_thresholds: validation set has no span labels");
  for (std::size_t k = 0; k < kNumAttributes; ++k) out.gamma[k] = best_threshold(w[k], g[k]);
  return out;
}

ExtractionThresholds tune_thresholds(const Model& model, const Embedder& embedder, const Dataset& validation) {
  if (model.config().projection.kind == ProjectionKind::fusedmax) return {};
  if (validation.empty()) throw Error("tune_thresholds: empty validation set");
  const auto inputs = encode_all(model, embedder, validation);
  return tune_thresholds(model, inputs, validation);
}

}  // namespace wsx
