#pragma once

// Identify -> classify -> extract pipeline over frozen token embeddings.

#include "wsx/data.hpp"
#include "wsx/metrics.hpp"
#include "wsx/nn.hpp"
#include "wsx/projections.hpp"
#include "wsx/scorers.hpp"

#include <array>
#include <filesystem>
#include <map>

namespace wsx {

// ---- embeddings -----------------------------------------------------------

enum class EmbeddingMode { frozen_random, precomputed_file };

std::string_view to_string(EmbeddingMode m);
EmbeddingMode parse_embedding_mode(std::string_view name);

struct EmbeddingSource {
  EmbeddingMode mode = EmbeddingMode::frozen_random;
  std::size_t dim = 64;
  std::uint64_t seed = 13;
  std::size_t window = 3;  // local averaging window of the frozen mix; 1 disables it
  std::filesystem::path path;
  std::size_t max_seq_len = 256;
};

/// Word-level vectors for a set of examples, keyed by example id.
struct PrecomputedEmbeddings {
  std::size_t dim = 0;
  std::vector<std::pair<std::string, Tensor>> entries;  // (id, words x dim)
};

/// Header `dim=<d> count=<n>`, then per example a line `id=<id>` followed by
/// one line of d space-separated floats per word. Floats are written in
/// shortest round-trip form, so parse(write(x)) is bit-exact.
void write_embeddings(const PrecomputedEmbeddings& emb, std::ostream& out);
void write_embeddings(const PrecomputedEmbeddings& emb, const std::filesystem::path& path);
PrecomputedEmbeddings read_embeddings(std::istream& in);
PrecomputedEmbeddings read_embeddings(const std::filesystem::path& path);

/// Deterministic N(0,1) vector for a word.
std::vector<double> frozen_word_vector(std::string_view word, std::size_t dim, std::uint64_t seed);

class Embedder {
 public:
  static Embedder from_source(const EmbeddingSource& src);
  static Embedder frozen_random(std::size_t dim, std::uint64_t seed, std::size_t window = 3);
  static Embedder precomputed(PrecomputedEmbeddings table, std::size_t max_seq_len = 256);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t max_seq_len() const noexcept { return max_seq_len_; }
  /// (length x dim) frozen contextual embeddings of the flattened text.
  Tensor embed(const DataPoint& dp) const;

 private:
  EmbeddingMode mode_ = EmbeddingMode::frozen_random;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::size_t window_ = 1;
  std::size_t max_seq_len_ = 256;
  std::map<std::string, Tensor, std::less<>> table_;
};

// ---- model pieces ---------------------------------------------------------

struct ExtractionThresholds {
  std::array<double, kNumAttributes> gamma{0.0, 0.0, 0.0};
};

struct AttentionResult {
  Attribute attribute = Attribute::frequency;
  Var scores;
  Var weights;
};

struct ClassifierParams {
  Linear hidden;
  Linear output;
};

struct ModelConfig {
  ScorerKind scorer = ScorerKind::tascore;
  ProjectionConfig projection;
  EmbeddingSource embedding;
  std::size_t speaker_dim = 2;
  std::size_t classifier_hidden = 512;
  double classifier_dropout = 0.2;
  TAScoreConfig tascore;  // query/key dims are filled from the embedding
  std::uint64_t init_seed = 1;

  std::size_t key_dim() const { return embedding.dim + speaker_dim; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

/// K = [E | speaker_table[speaker_j]] with E frozen.
Var encode_text(const Tensor& embeddings, std::span<const std::size_t> speakers, const Var& speaker_table,
                std::size_t max_seq_len = 256);

/// Mean of the medication token rows.
Tensor pool_medication(const Tensor& medication_rows);

std::array<AttentionResult, kNumAttributes> identify(const Var& q, const Var& keys,
                                                     const std::array<Scorer, kNumAttributes>& scorers,
                                                     const ProjectionConfig& projection, DropoutContext& ctx);

/// Per-attribute class probabilities from the attention-weighted contexts.
std::array<Var, kNumAttributes> classify(const std::array<Var, kNumAttributes>& weights, const Var& keys,
                                         const std::array<ClassifierParams, kNumAttributes>& classifiers,
                                         double dropout_p, DropoutContext& ctx);

/// 1 where weight > threshold (strict).
Mask extract_spans(std::span<const double> weights, double threshold);

struct EncodedInput {
  Tensor embeddings;  // length x dim, frozen
  std::vector<std::size_t> speakers;
  Tensor query;  // dim
  std::size_t length() const { return speakers.size(); }
};

struct ModelOutput {
  std::array<AttentionResult, kNumAttributes> attention;
  std::array<Var, kNumAttributes> probs;
  std::array<std::size_t, kNumAttributes> predicted{};
  std::array<Mask, kNumAttributes> masks;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  void set_projection(const ProjectionConfig& p);

  /// All trainable parameters, in a fixed order with stable names.
  const ParamSet& params() const noexcept { return params_; }

  const Var& speaker_table() const noexcept { return speaker_table_; }
  const std::array<Scorer, kNumAttributes>& scorers() const noexcept { return scorers_; }
  const std::array<ClassifierParams, kNumAttributes>& classifiers() const noexcept { return classifiers_; }

  EncodedInput encode(const DataPoint& dp, const Embedder& embedder) const;
  ModelOutput forward(const EncodedInput& in, DropoutContext& ctx, const ExtractionThresholds& thresholds = {}) const;

 private:
  ModelConfig cfg_;
  Var speaker_table_;
  std::array<Scorer, kNumAttributes> scorers_;
  std::array<ClassifierParams, kNumAttributes> classifiers_;
  ParamSet params_;
};

std::vector<EncodedInput> encode_all(const Model& model, const Embedder& embedder, const Dataset& data);

std::vector<Prediction> predict(const Model& model, std::span<const EncodedInput> inputs,
                                const ExtractionThresholds& thresholds);

EvalReport evaluate(const Model& model, const Embedder& embedder, const Dataset& data,
                    const ExtractionThresholds& thresholds, std::string system = "model");

}  // namespace wsx
