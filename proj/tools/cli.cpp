#include "cli.hpp"

#include "wsx/baseline.hpp"
#include "wsx/checkpoint.hpp"
#include "wsx/training.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace wsx::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

// ---- option bundles -------------------------------------------------------

struct GenerateOptions {
  GeneratorConfig gen;
  std::string distribution = "table2";
  fs::path out_dir;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  long long train_span_labels = -1;  // -1 keeps every span label
};

struct ModelOptions {
  ModelConfig cfg;
  std::string scorer = "tascore";
  std::string projection = "softmax";
  std::string embedding_mode = "frozen_random";
  std::string embeddings;
};

struct TrainOptions {
  fs::path train_path, val_path, out, history;
  ModelOptions model;
  TrainConfig train;
  std::string optimizer = "adam";
};

struct EvalOptions {
  fs::path data, out;
  std::string model = "oracle";
  std::string projection;  // empty keeps the checkpoint's
  std::string embeddings;
  std::string system;
};

struct ExtractOptions {
  fs::path data, out, sidecar;
  std::string model;
  std::string projection;
  std::string embeddings;
};

struct BaselineOptions {
  fs::path data, out, lexicon, dump_lexicon;
};

struct Options {
  GenerateOptions generate;
  TrainOptions train;
  EvalOptions evaluate;
  ExtractOptions extract;
  BaselineOptions baseline;
  fs::path manifest_out;
};

// ---- helpers --------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string report_json(const EvalReport& r) { return ordered_json::parse(r.to_json()).dump(2) + "\n"; }

void resolve_model(ModelOptions& m) {
  m.cfg.scorer = parse_scorer_kind(m.scorer);
  m.cfg.projection.kind = parse_projection_kind(m.projection);
  m.cfg.embedding.mode = parse_embedding_mode(m.embedding_mode);
  m.cfg.embedding.path = m.embeddings;
  if (m.cfg.embedding.mode == EmbeddingMode::precomputed_file && m.embeddings.empty())
    throw Error("--embedding-mode precomputed_file needs --embeddings");
  m.cfg.tascore.max_len = m.cfg.embedding.max_seq_len;
  m.cfg.validate();
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  ExtractionThresholds thresholds;
  Embedder embedder;
};

LoadedModel load_model(const std::string& path, const std::string& projection, const std::string& embeddings) {
  Checkpoint ck = load_checkpoint(path);
  if (!projection.empty()) {
    ProjectionConfig p = ck.model->config().projection;
    p.kind = parse_projection_kind(projection);
    ck.model->set_projection(p);
    if (p.kind == ProjectionKind::fusedmax) ck.thresholds = {};
  }
  EmbeddingSource src = ck.model->config().embedding;
  if (!embeddings.empty()) {
    src.mode = EmbeddingMode::precomputed_file;
    src.path = embeddings;
  }
  return LoadedModel{std::move(ck.model), ck.thresholds, Embedder::from_source(src)};
}

std::string mask_tags(const DataPoint& dp, const Prediction& pred) {
  // BBCode-style bracket tags; closes come before opens at each token
  std::ostringstream os;
  os << "# " << dp.id << " medication=\"";
  for (std::size_t i = 0; i < dp.medication.tokens.size(); ++i) os << (i ? " " : "") << dp.medication.tokens[i];
  os << "\"";
  if (pred.classes) {
    for (Attribute a : kAttributes)
      os << " " << to_string(a) << "=\"" << class_name(a, (*pred.classes)[std::size_t(a)]) << "\"";
  }
  os << "\n";
  std::size_t flat = 0;
  for (const auto& u : dp.utterances) {
    os << speaker_code(u.speaker) << ":";
    std::array<bool, kNumAttributes> open{};
    for (const auto& tok : u.tokens) {
      std::string closes, opens;
      for (std::size_t k = kNumAttributes; k-- > 0;) {
        const bool on = pred.masks[k][flat] != 0;
        if (open[k] && !on) closes += "[/" + std::string(to_string(kAttributes[k])) + "]";
      }
      for (std::size_t k = 0; k < kNumAttributes; ++k) {
        const bool on = pred.masks[k][flat] != 0;
        if (!open[k] && on) opens += "[" + std::string(to_string(kAttributes[k])) + "]";
        open[k] = on;
      }
      os << closes << " " << opens << tok;
      ++flat;
    }
    for (std::size_t k = kNumAttributes; k-- > 0;)
      if (open[k]) os << "[/" << to_string(kAttributes[k]) << "]";
    os << "\n";
  }
  os << "\n";
  return os.str();
}

std::string sidecar_line(const DataPoint& dp, const Prediction& pred) {
  ordered_json j;
  j["id"] = dp.id;
  ordered_json attrs = ordered_json::object();
  for (Attribute a : kAttributes) {
    ordered_json e;
    const std::size_t k = std::size_t(a);
    if (pred.classes) e["class"] = std::string(class_name(a, (*pred.classes)[k]));
    ordered_json spans = ordered_json::array();
    ordered_json text = ordered_json::array();
    for (const auto& [s, t] : mask_to_spans(pred.masks[k])) {
      spans.push_back({s, t});
      std::string words;
      for (std::size_t i = s; i < t; ++i) words += (i > s ? " " : "") + dp.tokens[i];
      text.push_back(words);
    }
    e["spans"] = std::move(spans);
    e["text"] = std::move(text);
    attrs[std::string(to_string(a))] = std::move(e);
  }
  j["attributes"] = std::move(attrs);
  return j.dump() + "\n";
}

// ---- commands -------------------------------------------------------------

void cmd_generate(GenerateOptions& o, std::ostream& out) {
  o.gen.class_distribution = parse_class_distribution(o.distribution);
  o.gen.validate();
  const double train_fraction = 1.0 - o.val_fraction - o.test_fraction;
  if (!(train_fraction > 0.0)) throw Error("validation and test fractions leave no training data");
  DatasetSplits s = split(generate(o.gen), {train_fraction, o.val_fraction, o.test_fraction}, o.gen.seed);
  if (o.train_span_labels >= 0) limit_span_labels(s.train, std::size_t(o.train_span_labels), o.gen.seed);
  fs::create_directories(o.out_dir);
  write_dataset(s.train, o.out_dir / "train.jsonl");
  write_dataset(s.validation, o.out_dir / "val.jsonl");
  write_dataset(s.test, o.out_dir / "test.jsonl");
  const auto labeled = std::count_if(s.train.begin(), s.train.end(), [](const auto& d) { return d.has_span_labels(); });
  out << "wrote " << s.train.size() << " train (" << labeled << " span-labeled), " << s.validation.size()
      << " validation, " << s.test.size() << " test examples to " << o.out_dir.string() << "\n";
}

void cmd_train(TrainOptions& o, std::ostream& out) {
  resolve_model(o.model);
  o.train.optimizer.kind = parse_optimizer_kind(o.optimizer);
  o.train.validate();
  const Dataset train_set = parse_dataset(o.train_path);
  const Dataset val = o.val_path.empty() ? Dataset{} : parse_dataset(o.val_path);
  Model model(o.model.cfg);
  const Embedder embedder = Embedder::from_source(o.model.cfg.embedding);

  std::string history;
  const TrainResult r = train(model, embedder, train_set, val, o.train, [&](const EpochRecord& e) {
    history += e.to_json() + "\n";
    out << "epoch " << e.epoch << "/" << o.train.epochs << "  loss_c " << e.loss_c << "  loss_i " << e.loss_i
        << "  " << to_string(e.projection) << "\n";
  });
  save_checkpoint(o.out, model, r.thresholds);
  const fs::path hist = o.history.empty() ? fs::path(o.out.string() + ".history.jsonl") : o.history;
  write_text(hist, history);
  out << "thresholds " << r.thresholds.gamma[0] << " " << r.thresholds.gamma[1] << " " << r.thresholds.gamma[2]
      << "\ncheckpoint " << o.out.string() << "\n";
}

void cmd_evaluate(EvalOptions& o, std::ostream& out) {
  const Dataset data = parse_dataset(o.data);
  EvalReport report;
  if (o.model == "oracle") {
    report = evaluate_predictions(data, oracle_predictions(data), o.system.empty() ? "oracle" : o.system);
  } else {
    LoadedModel m = load_model(o.model, o.projection, o.embeddings);
    report = evaluate(*m.model, m.embedder, data, m.thresholds, o.system.empty() ? "model" : o.system);
  }
  write_text(o.out, report_json(report));
  out << report.to_table();
}

void cmd_extract(ExtractOptions& o, std::ostream& out) {
  const Dataset data = parse_dataset(o.data);
  std::vector<Prediction> preds;
  if (o.model == "oracle") {
    preds = oracle_predictions(data);
  } else if (o.model == "baseline") {
    preds = baseline_predictions(data, default_lexicon());
  } else {
    LoadedModel m = load_model(o.model, o.projection, o.embeddings);
    preds = predict(*m.model, encode_all(*m.model, m.embedder, data), m.thresholds);
  }
  std::string text, side;
  for (std::size_t i = 0; i < data.size(); ++i) {
    text += mask_tags(data[i], preds[i]);
    side += sidecar_line(data[i], preds[i]);
  }
  const fs::path sidecar = o.sidecar.empty() ? fs::path(o.out.string() + ".jsonl") : o.sidecar;
  write_text(o.out, text);
  write_text(sidecar, side);
  out << "annotated " << data.size() << " examples into " << o.out.string() << " and " << sidecar.string() << "\n";
}

void cmd_baseline(BaselineOptions& o, std::ostream& out) {
  const Lexicon lex = o.lexicon.empty() ? default_lexicon() : load_lexicon(o.lexicon);
  if (!o.dump_lexicon.empty()) save_lexicon(lex, o.dump_lexicon);
  const Dataset data = parse_dataset(o.data);
  const EvalReport report = evaluate_predictions(data, baseline_predictions(data, lex), "phrase-baseline");
  write_text(o.out, report_json(report));
  out << report.to_table();
}

// ---- parser ---------------------------------------------------------------

void add_model_flags(CLI::App& c, ModelOptions& m) {
  auto& cfg = m.cfg;
  c.add_option("--scorer", m.scorer, "Attention scorer")->check(CLI::IsMember({"additive", "tascore"}));
  c.add_option("--projection", m.projection, "Projection onto the simplex")
      ->check(CLI::IsMember({"softmax", "fusedmax"}));
  c.add_option("--temperature", cfg.projection.temperature, "Softmax temperature");
  c.add_option("--tv-weight", cfg.projection.tv_weight, "Fused-lasso weight of fusedmax");
  c.add_option("--embedding-mode", m.embedding_mode, "Where token vectors come from")
      ->check(CLI::IsMember({"frozen_random", "precomputed_file"}));
  c.add_option("--embedding-dim", cfg.embedding.dim, "Token vector width");
  c.add_option("--embedding-seed", cfg.embedding.seed, "Seed of the frozen random table");
  c.add_option("--embedding-window", cfg.embedding.window, "Local mixing window of the frozen table (odd)");
  c.add_option("--embeddings", m.embeddings, "Precomputed embeddings file");
  c.add_option("--max-seq-len", cfg.embedding.max_seq_len, "Longest accepted example in tokens");
  c.add_option("--speaker-dim", cfg.speaker_dim, "Speaker embedding width");
  c.add_option("--classifier-hidden", cfg.classifier_hidden, "Classifier hidden width");
  c.add_option("--classifier-dropout", cfg.classifier_dropout, "Classifier dropout");
  c.add_option("--tascore-dim", cfg.tascore.model_dim, "Transformer scorer width");
  c.add_option("--tascore-layers", cfg.tascore.layers, "Transformer scorer layers");
  c.add_option("--tascore-heads", cfg.tascore.heads, "Transformer scorer attention heads");
  c.add_option("--tascore-ff", cfg.tascore.ff_dim, "Transformer scorer feed-forward width");
  c.add_option("--tascore-head-hidden", cfg.tascore.head_hidden, "Hidden width of the scoring head");
  c.add_option("--tascore-dropout", cfg.tascore.dropout, "Transformer scorer dropout");
  c.add_option("--init-seed", cfg.init_seed, "Parameter initialization seed");
}

std::vector<std::string> resolved_args(const CLI::App& sub) {
  std::vector<std::string> args{sub.get_name()};
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
    const std::string flag = "--" + opt->get_lnames()[0];
    if (opt->get_expected_min() == 0) {
      if (opt->count() > 0 && opt->as<bool>()) args.push_back(flag);
      continue;
    }
    const std::string value = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    if (value.empty()) continue;
    args.push_back(flag);
    args.push_back(value);
  }
  return args;
}

void write_manifest(const fs::path& path, const CLI::App& sub, const std::vector<std::string>& args) {
  ordered_json j;
  j["tool"] = "wsx";
  j["version"] = kVersion;
  j["command"] = sub.get_name();
  ordered_json options = ordered_json::object();
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string name = args[i].substr(2);
    const bool has_value = i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0;
    options[name] = has_value ? ordered_json(args[i + 1]) : ordered_json(true);
    if (has_value) ++i;
  }
  if (options.contains("seed")) j["seed"] = options["seed"];
  j["options"] = std::move(options);
  j["args"] = args;
  write_text(path, j.dump(2) + "\n");
}

std::vector<std::string> expand_manifest(std::vector<std::string> args) {
  if (args.empty()) return args;
  std::string path;
  std::size_t consumed = 0;
  if (args[0] == "--manifest" && args.size() >= 2) {
    path = args[1];
    consumed = 2;
  } else if (args[0].rfind("--manifest=", 0) == 0) {
    path = args[0].substr(11);
    consumed = 1;
  } else {
    return args;
  }
  const auto j = nlohmann::json::parse(read_text(path));
  auto replay = j.at("args").get<std::vector<std::string>>();
  replay.insert(replay.end(), args.begin() + std::ptrdiff_t(consumed), args.end());
  return replay;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  try {
    args = expand_manifest(std::move(args));
  } catch (const std::exception& e) {
    err << "error: cannot read manifest: " << e.what() << "\n";
    return 1;
  }

  Options o;
  CLI::App app{"Weakly supervised medication attribute extraction", "wsx"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);
  app.footer("Replay a previous run with: wsx --manifest <run.manifest.json> [overrides...]\n"
             "The default seed of every command can be set with WSX_SEED.");

  auto manifest_flag = [&](CLI::App* c) {
    c->add_option("--manifest-out", o.manifest_out, "Where to write the run manifest (default: next to the output)");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset split into train/val/test");
  {
    auto& g = o.generate;
    gen->add_option("--out", g.out_dir, "Output directory")->required();
    gen->add_option("--n", g.gen.n_examples, "Total number of examples");
    gen->add_option("--seed", g.gen.seed, "Generator and split seed")->envname("WSX_SEED");
    gen->add_option("--span-label-fraction", g.gen.span_label_fraction, "Share of examples with span labels");
    gen->add_option("--multi-medication-fraction", g.gen.multi_medication_fraction,
                    "Share of windows mentioning other medications");
    gen->add_option("--noise-frequency", g.gen.label_noise_rates[0], "Label noise rate for frequency");
    gen->add_option("--noise-route", g.gen.label_noise_rates[1], "Label noise rate for route");
    gen->add_option("--noise-change", g.gen.label_noise_rates[2], "Label noise rate for change");
    gen->add_option("--class-distribution", g.distribution, "Class priors")->check(CLI::IsMember({"table2", "uniform"}));
    gen->add_option("--val-fraction", g.val_fraction, "Validation share");
    gen->add_option("--test-fraction", g.test_fraction, "Test share");
    gen->add_option("--train-span-labels", g.train_span_labels, "Keep span labels on only this many train examples");
    manifest_flag(gen);
  }

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  {
    auto& t = o.train;
    tr->add_option("--train", t.train_path, "Training dataset")->required();
    tr->add_option("--val", t.val_path, "Validation dataset used for threshold tuning");
    tr->add_option("--out", t.out, "Checkpoint path")->required();
    tr->add_option("--history", t.history, "Training history (default: <out>.history.jsonl)");
    add_model_flags(*tr, t.model);
    tr->add_option("--epochs", t.train.epochs, "Training epochs");
    tr->add_option("--lr", t.train.learning_rate, "Learning rate");
    tr->add_option("--lambda", t.train.lambda_id, "Weight of the identification loss");
    tr->add_option("--optimizer", t.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}));
    tr->add_option("--beta1", t.train.optimizer.beta1, "Adam beta1");
    tr->add_option("--beta2", t.train.optimizer.beta2, "Adam beta2");
    tr->add_option("--epsilon", t.train.optimizer.epsilon, "Adam epsilon");
    tr->add_option("--momentum", t.train.optimizer.momentum, "SGD momentum");
    tr->add_flag("--fusedmax-star", t.train.fusedmax_star.enabled, "Train with softmax, finish with fusedmax");
    tr->add_option("--swap-fraction", t.train.fusedmax_star.swap_fraction, "Final share of epochs run with fusedmax");
    tr->add_option("--batch-size", t.train.batch_size, "Examples per update");
    tr->add_option("--seed", t.train.seed, "Shuffling and dropout seed")->envname("WSX_SEED");
    manifest_flag(tr);
  }

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint (or the oracle) on a dataset");
  {
    auto& e = o.evaluate;
    ev->add_option("--data", e.data, "Dataset to score")->required();
    ev->add_option("--model", e.model, "Checkpoint path, or 'oracle'");
    ev->add_option("--out", e.out, "Report path (JSON)")->required();
    ev->add_option("--projection", e.projection, "Override the checkpoint's projection")
        ->check(CLI::IsMember({"softmax", "fusedmax"}));
    ev->add_option("--embeddings", e.embeddings, "Precomputed embeddings for this dataset");
    ev->add_option("--system", e.system, "System name recorded in the report");
    manifest_flag(ev);
  }

  auto* ex = app.add_subcommand("extract", "Write predicted spans as bracket-tagged text plus a JSONL sidecar");
  {
    auto& e = o.extract;
    ex->add_option("--data", e.data, "Dataset to annotate")->required();
    ex->add_option("--model", e.model, "Checkpoint path, 'oracle' or 'baseline'")->required();
    ex->add_option("--out", e.out, "Annotated text path")->required();
    ex->add_option("--sidecar", e.sidecar, "JSONL sidecar (default: <out>.jsonl)");
    ex->add_option("--projection", e.projection, "Override the checkpoint's projection")
        ->check(CLI::IsMember({"softmax", "fusedmax"}));
    ex->add_option("--embeddings", e.embeddings, "Precomputed embeddings for this dataset");
    manifest_flag(ex);
  }

  auto* bl = app.add_subcommand("baseline", "Score the phrase-matching baseline on a dataset");
  {
    auto& b = o.baseline;
    bl->add_option("--data", b.data, "Dataset to score")->required();
    bl->add_option("--out", b.out, "Report path (JSON)")->required();
    bl->add_option("--lexicon", b.lexicon, "Lexicon file replacing the built-in one");
    bl->add_option("--dump-lexicon", b.dump_lexicon, "Also write the lexicon in use to this path");
    manifest_flag(bl);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const auto resolved = resolved_args(*sub);
    fs::path manifest = o.manifest_out;
    std::function<void()> body;
    if (sub == gen) {
      if (manifest.empty()) manifest = o.generate.out_dir / "manifest.json";
      body = [&] { cmd_generate(o.generate, out); };
    } else if (sub == tr) {
      if (manifest.empty()) manifest = o.train.out.string() + ".manifest.json";
      body = [&] { cmd_train(o.train, out); };
    } else if (sub == ev) {
      if (manifest.empty()) manifest = o.evaluate.out.string() + ".manifest.json";
      body = [&] { cmd_evaluate(o.evaluate, out); };
    } else if (sub == ex) {
      if (manifest.empty()) manifest = o.extract.out.string() + ".manifest.json";
      body = [&] { cmd_extract(o.extract, out); };
    } else {
      if (manifest.empty()) manifest = o.baseline.out.string() + ".manifest.json";
      body = [&] { cmd_baseline(o.baseline, out); };
    }
    body();
    write_manifest(manifest, *sub, resolved);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace wsx::cli
