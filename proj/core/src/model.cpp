#include "wsx/model.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace wsx {

namespace {

std::size_t idx(Attribute a) { return static_cast<std::size_t>(a); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---- embeddings -----------------------------------------------------------

std::string_view to_string(EmbeddingMode m) {
  return m == EmbeddingMode::frozen_random ? "frozen_random" : "precomputed_file";
}

EmbeddingMode parse_embedding_mode(std::string_view name) {
  if (name == "frozen_random") return EmbeddingMode::frozen_random;
  if (name == "precomputed_file") return EmbeddingMode::precomputed_file;
  throw Error("unknown embedding mode '" + std::string(name) + "' (expected frozen_random or precomputed_file)");
}

void write_embeddings(const PrecomputedEmbeddings& emb, std::ostream& out) {
  out << "dim=" << emb.dim << " count=" << emb.entries.size() << '\n';
  char buf[64];
  for (const auto& [id, t] : emb.entries) {
    if (t.shape().size() != 2 || t.cols() != emb.dim)
      throw Error("write_embeddings: '" + id + "' has shape " + shape_str(t.shape()) + ", expected (words," +
                  std::to_string(emb.dim) + ")");
    if (id.empty() || id.find('\n') != std::string::npos) throw Error("write_embeddings: invalid id");
    out << "id=" << id << '\n';
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < emb.dim; ++c) {
        const auto res = std::to_chars(buf, buf + sizeof buf, t.at(r, c));
        if (c) out << ' ';
        out.write(buf, res.ptr - buf);
      }
      out << '\n';
    }
  }
}

void write_embeddings(const PrecomputedEmbeddings& emb, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_embeddings(emb, out);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

PrecomputedEmbeddings read_embeddings(std::istream& in) {
  PrecomputedEmbeddings emb;
  std::string line;
  std::size_t lineno = 1;
  auto fail = [&](const std::string& msg) { throw Error("embeddings line " + std::to_string(lineno) + ": " + msg); };
  if (!std::getline(in, line)) fail("missing header");
  std::size_t count = 0;
  if (std::sscanf(line.c_str(), "dim=%zu count=%zu", &emb.dim, &count) != 2 || emb.dim == 0)
    fail("expected header 'dim=<d> count=<n>'");

  std::string id;
  std::vector<double> rows;
  auto flush = [&] {
    if (id.empty()) return;
    const std::size_t n = rows.size() / emb.dim;
    if (n == 0) fail("example '" + id + "' has no word vectors");
    emb.entries.emplace_back(id, Tensor({n, emb.dim}, std::move(rows)));
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("id=", 0) == 0) {
      flush();
      id = line.substr(3);
      if (id.empty()) fail("empty id");
      continue;
    }
    if (id.empty()) fail("vector before the first id line");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    std::size_t fields = 0;
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p >= end) break;
      double v = 0.0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) fail("malformed float");
      rows.push_back(v);
      ++fields;
      p = res.ptr;
    }
    if (fields != emb.dim)
      fail("expected " + std::to_string(emb.dim) + " floats, found " + std::to_string(fields));
  }
  flush();
  if (emb.entries.size() != count)
    throw Error("embeddings: header declares " + std::to_string(count) + " examples, found " +
                std::to_string(emb.entries.size()));
  return emb;
}

PrecomputedEmbeddings read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embeddings '" + path.string() + "'");
  return read_embeddings(in);
}

std::vector<double> frozen_word_vector(std::string_view word, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(fnv1a(word) ^ splitmix64(seed)));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = n(rng);
  return v;
}

Embedder Embedder::from_source(const EmbeddingSource& src) {
  if (src.mode == EmbeddingMode::frozen_random) {
    Embedder e = frozen_random(src.dim, src.seed, src.window);
    e.max_seq_len_ = src.max_seq_len;
    return e;
  }
  PrecomputedEmbeddings table = read_embeddings(src.path);
  if (table.dim != src.dim)
    throw Error("embeddings file '" + src.path.string() + "' has dim " + std::to_string(table.dim) +
                ", configuration expects " + std::to_string(src.dim));
  return precomputed(std::move(table), src.max_seq_len);
}

Embedder Embedder::frozen_random(std::size_t dim, std::uint64_t seed, std::size_t window) {
  if (dim == 0) throw Error("embedder: dim must be positive");
  if (window == 0 || window % 2 == 0) throw Error("embedder: window must be odd");
  Embedder e;
  e.mode_ = EmbeddingMode::frozen_random;
  e.dim_ = dim;
  e.seed_ = seed;
  e.window_ = window;
  return e;
}

Embedder Embedder::precomputed(PrecomputedEmbeddings table, std::size_t max_seq_len) {
  Embedder e;
  e.mode_ = EmbeddingMode::precomputed_file;
  e.dim_ = table.dim;
  e.max_seq_len_ = max_seq_len;
  for (auto& [id, t] : table.entries) {
    if (!e.table_.emplace(id, std::move(t)).second) throw Error("embeddings: duplicate id '" + id + "'");
  }
  return e;
}

Tensor Embedder::embed(const DataPoint& dp) const {
  const std::size_t l = dp.length();
  if (mode_ == EmbeddingMode::precomputed_file) {
    const auto it = table_.find(dp.id);
    if (it == table_.end()) throw Error("embeddings: no vectors for example '" + dp.id + "'");
    if (it->second.rows() != l)
      throw Error("embeddings: example '" + dp.id + "' has " + std::to_string(it->second.rows()) +
                  " word vectors for " + std::to_string(l) + " tokens");
    return it->second;
  }
  std::vector<std::vector<double>> raw(l);
  for (std::size_t j = 0; j < l; ++j) raw[j] = frozen_word_vector(dp.tokens[j], dim_, seed_);
  Tensor out({l, dim_});
  const std::size_t half = window_ / 2;
  const double side = half ? 0.5 / double(2 * half) : 0.0;
  for (std::size_t j = 0; j < l; ++j) {
    const std::size_t lo = j >= half ? j - half : 0;
    const std::size_t hi = std::min(l - 1, j + half);
    double total = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) {
      const double w = i == j ? (half ? 0.5 : 1.0) : side;
      total += w;
      for (std::size_t c = 0; c < dim_; ++c) out.at(j, c) += w * raw[i][c];
    }
    for (std::size_t c = 0; c < dim_; ++c) out.at(j, c) /= total;
  }
  return out;
}

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  projection.validate();
  if (embedding.dim == 0) throw Error("ModelConfig: embedding dim must be positive");
  if (speaker_dim == 0) throw Error("ModelConfig: speaker dim must be positive");
  if (classifier_hidden == 0) throw Error("ModelConfig: classifier hidden size must be positive");
  if (!(classifier_dropout >= 0.0 && classifier_dropout < 1.0))
    throw Error("ModelConfig: classifier dropout must be in [0,1)");
  TAScoreConfig t = tascore;
  t.query_dim = embedding.dim;
  t.key_dim = key_dim();
  t.validate();
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["scorer"] = std::string(to_string(scorer));
  j["projection"] = {{"kind", std::string(to_string(projection.kind))},
                     {"temperature", projection.temperature},
                     {"tv_weight", projection.tv_weight}};
  j["embedding"] = {{"mode", std::string(to_string(embedding.mode))},
                    {"dim", embedding.dim},
                    {"seed", embedding.seed},
                    {"window", embedding.window},
                    {"path", embedding.path.string()},
                    {"max_seq_len", embedding.max_seq_len}};
  j["speaker_dim"] = speaker_dim;
  j["classifier_hidden"] = classifier_hidden;
  j["classifier_dropout"] = classifier_dropout;
  j["tascore"] = {{"model_dim", tascore.model_dim},     {"layers", tascore.layers},
                  {"heads", tascore.heads},             {"ff_dim", tascore.ff_dim},
                  {"head_hidden", tascore.head_hidden}, {"dropout", tascore.dropout},
                  {"max_len", tascore.max_len}};
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.scorer = parse_scorer_kind(j.at("scorer").get<std::string>());
    const auto& p = j.at("projection");
    c.projection.kind = parse_projection_kind(p.at("kind").get<std::string>());
    c.projection.temperature = p.at("temperature").get<double>();
    c.projection.tv_weight = p.at("tv_weight").get<double>();
    const auto& e = j.at("embedding");
    c.embedding.mode = parse_embedding_mode(e.at("mode").get<std::string>());
    c.embedding.dim = e.at("dim").get<std::size_t>();
    c.embedding.seed = e.at("seed").get<std::uint64_t>();
    c.embedding.window = e.at("window").get<std::size_t>();
    c.embedding.path = e.at("path").get<std::string>();
    c.embedding.max_seq_len = e.at("max_seq_len").get<std::size_t>();
    c.speaker_dim = j.at("speaker_dim").get<std::size_t>();
    c.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
    c.classifier_dropout = j.at("classifier_dropout").get<double>();
    const auto& t = j.at("tascore");
    c.tascore.model_dim = t.at("model_dim").get<std::size_t>();
    c.tascore.layers = t.at("layers").get<std::size_t>();
    c.tascore.heads = t.at("heads").get<std::size_t>();
    c.tascore.ff_dim = t.at("ff_dim").get<std::size_t>();
    c.tascore.head_hidden = t.at("head_hidden").get<std::size_t>();
    c.tascore.dropout = t.at("dropout").get<double>();
    c.tascore.max_len = t.at("max_len").get<std::size_t>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("model config: ") + ex.what());
  }
}

// ---- pipeline pieces ------------------------------------------------------

Var encode_text(const Tensor& embeddings, std::span<const std::size_t> speakers, const Var& speaker_table,
                std::size_t max_seq_len) {
  const std::size_t l = speakers.size();
  if (embeddings.shape().size() != 2 || embeddings.rows() != l)
    throw Error("encode_text: embeddings of shape " + shape_str(embeddings.shape()) + " for " + std::to_string(l) +
                " tokens");
  if (l == 0) throw Error("encode_text: empty text");
  if (l > max_seq_len)
    throw Error("encode_text: " + std::to_string(l) + " tokens exceed max_seq_len " + std::to_string(max_seq_len));
  for (std::size_t s : speakers)
    if (s >= speaker_table.shape()[0]) throw Error("encode_text: unknown speaker id " + std::to_string(s));
  return concat_cols({Var::constant(embeddings), embedding_lookup(speaker_table, speakers)});
}

Tensor pool_medication(const Tensor& rows) {
  if (rows.shape().size() != 2 || rows.rows() == 0) throw Error("pool_medication: empty medication span");
  Tensor q({rows.cols()}, 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t c = 0; c < rows.cols(); ++c) q[c] += rows.at(r, c);
  for (auto& x : q.values()) x /= double(rows.rows());
  return q;
}

std::array<AttentionResult, kNumAttributes> identify(const Var& q, const Var& keys,
                                                     const std::array<Scorer, kNumAttributes>& scorers,
                                                     const ProjectionConfig& projection, DropoutContext& ctx) {
  std::array<AttentionResult, kNumAttributes> out;
  for (Attribute a : kAttributes) {
    auto& r = out[idx(a)];
    r.attribute = a;
    r.scores = scorers[idx(a)](q, keys, ctx);
    r.weights = project(r.scores, projection);
  }
  return out;
}

std::array<Var, kNumAttributes> classify(const std::array<Var, kNumAttributes>& weights, const Var& keys,
                                         const std::array<ClassifierParams, kNumAttributes>& classifiers,
                                         double dropout_p, DropoutContext& ctx) {
  std::array<Var, kNumAttributes> out;
  const std::size_t l = keys.shape()[0];
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    if (weights[k].size() != l)
      throw Error("classify: attention of length " + std::to_string(weights[k].size()) + " for " +
                  std::to_string(l) + " keys");
    Var context = matmul(reshape(weights[k], {1, l}), keys);
    Var h = dropout(relu(classifiers[k].hidden(context)), dropout_p, ctx);
    Var logits = classifiers[k].output(h);
    out[k] = reshape(softmax_rows(logits), {logits.size()});
  }
  return out;
}

Mask extract_spans(std::span<const double> weights, double threshold) {
  if (!(threshold >= 0.0)) throw Error("extract_spans: threshold must be >= 0");
  Mask m(weights.size(), 0);
  for (std::size_t i = 0; i < weights.size(); ++i) m[i] = weights[i] > threshold ? 1 : 0;
  return m;
}

// ---- Model ----------------------------------------------------------------

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  cfg_.tascore.query_dim = cfg_.embedding.dim;
  cfg_.tascore.key_dim = cfg_.key_dim();
  std::mt19937_64 rng(cfg_.init_seed);

  Tensor speakers({kNumSpeakers, cfg_.speaker_dim});
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : speakers.values()) x = n(rng);
  speaker_table_ = Var::parameter(std::move(speakers));
  params_.add("speaker_table", speaker_table_);

  for (Attribute a : kAttributes) {
    const std::string name = "scorer." + std::string(to_string(a));
    scorers_[idx(a)] = cfg_.scorer == ScorerKind::additive
                           ? Scorer(AdditiveScorerParams::init(cfg_.embedding.dim, cfg_.key_dim(), rng))
                           : Scorer(TAScoreParams::init(cfg_.tascore, rng));
    scorers_[idx(a)].collect(name, params_);
  }
  for (Attribute a : kAttributes) {
    const std::string name = "classifier." + std::string(to_string(a));
    auto& c = classifiers_[idx(a)];
    c.hidden = Linear::init(cfg_.key_dim(), cfg_.classifier_hidden, rng);
    c.output = Linear::init(cfg_.classifier_hidden, class_count(a), rng);
    c.hidden.collect(name + ".hidden", params_);
    c.output.collect(name + ".output", params_);
  }
}

void Model::set_projection(const ProjectionConfig& p) {
  p.validate();
  cfg_.projection = p;
}

EncodedInput Model::encode(const DataPoint& dp, const Embedder& embedder) const {
  if (embedder.dim() != cfg_.embedding.dim)
    throw Error("model expects embedding dim " + std::to_string(cfg_.embedding.dim) + ", embedder provides " +
                std::to_string(embedder.dim()));
  if (dp.length() > cfg_.embedding.max_seq_len)
    throw Error("example '" + dp.id + "' has " + std::to_string(dp.length()) + " tokens, over max_seq_len " +
                std::to_string(cfg_.embedding.max_seq_len));
  EncodedInput in;
  in.embeddings = embedder.embed(dp);
  in.speakers = dp.speakers;
  const std::size_t b = dp.medication.start, e = dp.medication.end;
  Tensor med({e - b, embedder.dim()});
  for (std::size_t r = b; r < e; ++r)
    for (std::size_t c = 0; c < embedder.dim(); ++c) med.at(r - b, c) = in.embeddings.at(r, c);
  in.query = pool_medication(med);
  return in;
}

ModelOutput Model::forward(const EncodedInput& in, DropoutContext& ctx, const ExtractionThresholds& thresholds) const {
  ModelOutput out;
  const Var keys = encode_text(in.embeddings, in.speakers, speaker_table_, cfg_.embedding.max_seq_len);
  const Var q = Var::constant(in.query);
  out.attention = identify(q, keys, scorers_, cfg_.projection, ctx);
  std::array<Var, kNumAttributes> weights;
  for (std::size_t k = 0; k < kNumAttributes; ++k) weights[k] = out.attention[k].weights;
  out.probs = classify(weights, keys, classifiers_, cfg_.classifier_dropout, ctx);
  for (std::size_t k = 0; k < kNumAttributes; ++k) {
    const auto p = out.probs[k].value().data();
    out.predicted[k] = std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
    out.masks[k] = extract_spans(out.attention[k].weights.value().data(), thresholds.gamma[k]);
  }
  return out;
}

std::vector<EncodedInput> encode_all(const Model& model, const Embedder& embedder, const Dataset& data) {
  std::vector<EncodedInput> out;
  out.reserve(data.size());
  for (const auto& dp : data) out.push_back(model.encode(dp, embedder));
  return out;
}

std::vector<Prediction> predict(const Model& model, std::span<const EncodedInput> inputs,
                                const ExtractionThresholds& thresholds) {
  std::vector<Prediction> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    DropoutContext ctx;
    const ModelOutput o = model.forward(in, ctx, thresholds);
    out.push_back(Prediction{o.masks, o.predicted});
  }
  return out;
}

EvalReport evaluate(const Model& model, const Embedder& embedder, const Dataset& data,
                    const ExtractionThresholds& thresholds, std::string system) {
  const auto inputs = encode_all(model, embedder, data);
  return evaluate_predictions(data, predict(model, inputs, thresholds), std::move(system));
}

}  // namespace wsx
