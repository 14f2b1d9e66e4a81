#pragma once

// Attention scoring functions S(q, K) -> one score per key row.

#include "wsx/nn.hpp"

#include <variant>

namespace wsx {

enum class ScorerKind { additive, tascore };

std::string_view to_string(ScorerKind kind);
ScorerKind parse_scorer_kind(std::string_view name);

/// s_j = v . tanh(Wq q + Wk k_j). Matrices are stored transposed so that
/// rows multiply from the left: Wq is (m x m), Wk is (n_key x m).
struct AdditiveScorerParams {
  Var w_query;
  Var w_key;
  Var v;

  static AdditiveScorerParams init(std::size_t query_dim, std::size_t key_dim, std::mt19937_64& rng);
  std::size_t query_dim() const { return w_query.shape()[0]; }
  std::size_t key_dim() const { return w_key.shape()[0]; }
  void collect(const std::string& prefix, ParamSet& out) const;
};

Var additive_score(const Var& q, const Var& keys, const AdditiveScorerParams& params);

struct TAScoreConfig {
  std::size_t query_dim = 64;
  std::size_t key_dim = 66;
  std::size_t model_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 1;
  std::size_t ff_dim = 32;
  std::size_t head_hidden = 16;
  double dropout = 0.2;
  std::size_t max_len = 256;

  void validate() const;
};

/// Fixed sinusoidal table, interleaved sin/cos per frequency.
Tensor sinusoidal_positions(std::size_t max_len, std::size_t dim);

struct EncoderLayerParams {
  Linear query, key, value, output;
  Var norm1_gain, norm1_bias;
  Linear ff1, ff2;
  Var norm2_gain, norm2_bias;
};

struct TAScoreParams {
  TAScoreConfig config;
  Linear query_linear;
  Linear key_linear;
  Var separator;
  Tensor positional;
  std::vector<EncoderLayerParams> layers;
  Linear head1;
  Linear head2;

  static TAScoreParams init(const TAScoreConfig& cfg, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Encodes [q; separator; k_1 + p_1; ...; k_l + p_l] and reads one score per
/// key position; the query and separator outputs are discarded.
Var tascore(const Var& q, const Var& keys, const TAScoreParams& params, DropoutContext& ctx,
            std::size_t position_offset = 0);

/// A scorer of either kind behind one interface.
class Scorer {
 public:
  Scorer() = default;
  explicit Scorer(AdditiveScorerParams p) : impl_(std::move(p)) {}
  explicit Scorer(TAScoreParams p) : impl_(std::move(p)) {}

  ScorerKind kind() const { return impl_.index() == 0 ? ScorerKind::additive : ScorerKind::tascore; }
  Var operator()(const Var& q, const Var& keys, DropoutContext& ctx) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  const AdditiveScorerParams& additive() const { return std::get<AdditiveScorerParams>(impl_); }
  const TAScoreParams& transformer() const { return std::get<TAScoreParams>(impl_); }

 private:
  std::variant<AdditiveScorerParams, TAScoreParams> impl_;
};

}  // namespace wsx
