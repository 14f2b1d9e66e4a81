#include "wsx/scorers.hpp"

#include <cmath>

namespace wsx {

std::string_view to_string(ScorerKind kind) { return kind == ScorerKind::additive ? "additive" : "tascore"; }

ScorerKind parse_scorer_kind(std::string_view name) {
  if (name == "additive") return ScorerKind::additive;
  if (name == "tascore") return ScorerKind::tascore;
  throw Error("unknown scorer '" + std::string(name) + "' (expected additive or tascore)");
}

// ---- additive -------------------------------------------------------------

AdditiveScorerParams AdditiveScorerParams::init(std::size_t query_dim, std::size_t key_dim, std::mt19937_64& rng) {
  AdditiveScorerParams p;
  p.w_query = Var::parameter(glorot(query_dim, query_dim, rng));
  p.w_key = Var::parameter(glorot(key_dim, query_dim, rng));
  Tensor v = glorot(query_dim, 1, rng);
  p.v = Var::parameter(Tensor({query_dim}, v.values()));
  return p;
}

void AdditiveScorerParams::collect(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".w_query", w_query);
  out.add(prefix + ".w_key", w_key);
  out.add(prefix + ".v", v);
}

Var additive_score(const Var& q, const Var& keys, const AdditiveScorerParams& params) {
  const std::size_t m = params.query_dim();
  if (q.size() != m)
    throw Error("additive_score: query of size " + std::to_string(q.size()) + " for query dim " + std::to_string(m));
  if (keys.shape().size() != 2 || keys.shape()[1] != params.key_dim())
    throw Error("additive_score: keys of shape " + shape_str(keys.shape()) + " for key dim " +
                std::to_string(params.key_dim()));
  Var hidden = tanh(add_row(matmul(keys, params.w_key), matmul(as_row(q), params.w_query)));
  Var s = matmul(hidden, reshape(params.v, {m, 1}));
  return reshape(s, {keys.shape()[0]});
}

// ---- TAScore --------------------------------------------------------------

void TAScoreConfig::validate() const {
  if (query_dim == 0 || key_dim == 0 || model_dim == 0 || ff_dim == 0 || head_hidden == 0 || layers == 0)
    throw Error("TAScoreConfig: dimensions must be positive");
  if (heads == 0 || model_dim % heads != 0)
    throw Error("TAScoreConfig: model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                std::to_string(heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("TAScoreConfig: dropout must be in [0,1)");
  if (max_len == 0) throw Error("TAScoreConfig: max_len must be positive");
}

Tensor sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  Tensor pe({max_len, dim});
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / double(dim));
      pe.at(pos, i) = std::sin(double(pos) * freq);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(double(pos) * freq);
    }
  }
  return pe;
}

TAScoreParams TAScoreParams::init(const TAScoreConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  TAScoreParams p;
  p.config = cfg;
  p.query_linear = Linear::init(cfg.query_dim, d, rng);
  p.key_linear = Linear::init(cfg.key_dim, d, rng);
  std::normal_distribution<double> n(0.0, 0.02);
  Tensor sep({d});
  for (auto& x : sep.values()) x = n(rng);
  p.separator = Var::parameter(std::move(sep));
  p.positional = sinusoidal_positions(cfg.max_len, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams layer;
    layer.query = Linear::init(d, d, rng);
    layer.key = Linear::init(d, d, rng);
    layer.value = Linear::init(d, d, rng);
    layer.output = Linear::init(d, d, rng);
    layer.norm1_gain = Var::parameter(Tensor({d}, 1.0));
    layer.norm1_bias = Var::parameter(Tensor({d}, 0.0));
    layer.ff1 = Linear::init(d, cfg.ff_dim, rng);
    layer.ff2 = Linear::init(cfg.ff_dim, d, rng);
    layer.norm2_gain = Var::parameter(Tensor({d}, 1.0));
    layer.norm2_bias = Var::parameter(Tensor({d}, 0.0));
    p.layers.push_back(std::move(layer));
  }
  p.head1 = Linear::init(d, cfg.head_hidden, rng);
  p.head2 = Linear::init(cfg.head_hidden, 1, rng);
  return p;
}

void TAScoreParams::collect(const std::string& prefix, ParamSet& out) const {
  query_linear.collect(prefix + ".query_linear", out);
  key_linear.collect(prefix + ".key_linear", out);
  out.add(prefix + ".separator", separator);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = prefix + ".layer" + std::to_string(l);
    L.query.collect(p + ".attn_query", out);
    L.key.collect(p + ".attn_key", out);
    L.value.collect(p + ".attn_value", out);
    L.output.collect(p + ".attn_output", out);
    out.add(p + ".norm1.gain", L.norm1_gain);
    out.add(p + ".norm1.bias", L.norm1_bias);
    L.ff1.collect(p + ".ff1", out);
    L.ff2.collect(p + ".ff2", out);
    out.add(p + ".norm2.gain", L.norm2_gain);
    out.add(p + ".norm2.bias", L.norm2_bias);
  }
  head1.collect(prefix + ".head1", out);
  head2.collect(prefix + ".head2", out);
}

namespace {

Var self_attention(const Var& x, const EncoderLayerParams& L, std::size_t heads, double p, DropoutContext& ctx) {
  const Var q = L.query(x), k = L.key(x), v = L.value(x);
  const std::size_t d = x.shape()[1];
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(double(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Var a = softmax_rows(scale(matmul_nt(qh, kh), inv));
    outs.push_back(matmul(dropout(a, p, ctx), vh));
  }
  return L.output(heads == 1 ? outs[0] : concat_cols(outs));
}

}  // namespace

Var tascore(const Var& q, const Var& keys, const TAScoreParams& params, DropoutContext& ctx,
            std::size_t position_offset) {
  const auto& cfg = params.config;
  if (keys.shape().size() != 2 || keys.shape()[1] != cfg.key_dim)
    throw Error("tascore: keys of shape " + shape_str(keys.shape()) + " for key dim " + std::to_string(cfg.key_dim));
  if (q.size() != cfg.query_dim)
    throw Error("tascore: query of size " + std::to_string(q.size()) + " for query dim " +
                std::to_string(cfg.query_dim));
  const std::size_t l = keys.shape()[0];
  if (l == 0) throw Error("tascore: no keys");
  if (position_offset + l > cfg.max_len)
    throw Error("tascore: " + std::to_string(l) + " keys at offset " + std::to_string(position_offset) +
                " exceed max_len " + std::to_string(cfg.max_len));

  const std::size_t d = cfg.model_dim;
  Tensor pos({l, d});
  for (std::size_t j = 0; j < l; ++j)
    for (std::size_t c = 0; c < d; ++c) pos.at(j, c) = params.positional.at(position_offset + j, c);

  Var x = concat_rows({params.query_linear(q), reshape(params.separator, {1, d}),
                       add(params.key_linear(keys), Var::constant(std::move(pos)))});
  for (const auto& L : params.layers) {
    Var attn = self_attention(x, L, cfg.heads, cfg.dropout, ctx);
    x = layer_norm_rows(add(x, dropout(attn, cfg.dropout, ctx)), L.norm1_gain, L.norm1_bias);
    Var ff = L.ff2(relu(L.ff1(x)));
    x = layer_norm_rows(add(x, dropout(ff, cfg.dropout, ctx)), L.norm2_gain, L.norm2_bias);
  }
  Var hidden = dropout(relu(params.head1(slice_rows(x, 2, l + 2))), cfg.dropout, ctx);
  return reshape(params.head2(hidden), {l});
}

// ---- Scorer ---------------------------------------------------------------

Var Scorer::operator()(const Var& q, const Var& keys, DropoutContext& ctx) const {
  if (const auto* a = std::get_if<AdditiveScorerParams>(&impl_)) return additive_score(q, keys, *a);
  return tascore(q, keys, std::get<TAScoreParams>(impl_), ctx);
}

void Scorer::collect(const std::string& prefix, ParamSet& out) const {
  if (const auto* a = std::get_if<AdditiveScorerParams>(&impl_)) {
    a->collect(prefix, out);
  } else {
    std::get<TAScoreParams>(impl_).collect(prefix, out);
  }
}

}  // namespace wsx
