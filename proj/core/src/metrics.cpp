#include "wsx/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace wsx {

namespace {

void check_pair(const MaskPair& p) {
  if (p.predicted.size() != p.gold.size())
    throw Error("mask pair length mismatch: predicted " + std::to_string(p.predicted.size()) + ", gold " +
                std::to_string(p.gold.size()));
}

std::size_t ones(const Mask& m) { return std::size_t(std::count_if(m.begin(), m.end(), [](auto v) { return v != 0; })); }

std::optional<double> mean_of(const std::array<AttributeReport, kNumAttributes>& attrs,
                              std::optional<double> AttributeReport::*field) {
  double s = 0.0;
  for (const auto& a : attrs) {
    if (!(a.*field)) return std::nullopt;
    s += *(a.*field);
  }
  return s / double(kNumAttributes);
}

}  // namespace

double token_f1(std::span<const MaskPair> pairs) {
  if (pairs.empty()) throw Error("token_f1: no mask pairs");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& p : pairs) {
    check_pair(p);
    for (std::size_t i = 0; i < p.gold.size(); ++i) {
      const bool pr = p.predicted[i] != 0, g = p.gold[i] != 0;
      tp += pr && g;
      fp += pr && !g;
      fn += !pr && g;
    }
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : double(2 * tp) / double(denom);
}

std::size_t lcs_length(const MaskPair& pair) {
  check_pair(pair);
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < pair.gold.size(); ++i) {
    run = (pair.predicted[i] && pair.gold[i]) ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

LcsF1 lcsf1_detail(std::span<const MaskPair> pairs) {
  if (pairs.empty()) throw Error("lcsf1: no mask pairs");
  LcsF1 out;
  double total = 0.0;
  for (const auto& p : pairs) {
    check_pair(p);
    const std::size_t g = ones(p.gold);
    if (g == 0) {
      ++out.skipped_empty_gold;
      continue;
    }
    ++out.included;
    const std::size_t pr = ones(p.predicted);
    const double lcs = double(lcs_length(p));
    const double recall = lcs / double(g);
    const double precision = pr == 0 ? 0.0 : lcs / double(pr);
    total += (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  out.score = out.included ? total / double(out.included) : 0.0;
  return out;
}

double lcsf1(std::span<const MaskPair> pairs) { return lcsf1_detail(pairs).score; }

double classification_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                         std::size_t n_classes) {
  if (preds.size() != golds.size())
    throw Error("classification_f1: " + std::to_string(preds.size()) + " predictions for " +
                std::to_string(golds.size()) + " labels");
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::vector<bool> present(n_classes, false);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t p = preds[i], g = golds[i];
    if (p >= n_classes || g >= n_classes) throw Error("classification_f1: label out of range");
    present[p] = present[g] = true;
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!present[c]) continue;
    ++counted;
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    total += denom ? double(2 * tp[c]) / double(denom) : 0.0;
  }
  return counted ? total / double(counted) : 0.0;
}

std::size_t segment_count(const Mask& mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && (i == 0 || !mask[i - 1])) ++n;
  return n;
}

EvalReport evaluate_predictions(const Dataset& data, std::span<const Prediction> predictions, std::string system) {
  if (data.size() != predictions.size())
    throw Error("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                std::to_string(data.size()) + " examples");
  if (data.empty()) throw Error("evaluate: empty dataset");
  EvalReport report;
  report.system = std::move(system);
  report.examples = data.size();
  for (const auto& dp : data) report.span_examples += dp.has_span_labels();

  const bool with_classes =
      std::all_of(predictions.begin(), predictions.end(), [](const Prediction& p) { return p.classes.has_value(); });

  for (Attribute a : kAttributes) {
    const auto k = static_cast<std::size_t>(a);
    auto& ar = report.attributes[k];
    std::vector<MaskPair> pairs;
    double segments = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto gold = data[i].gold_mask(a);
      if (!gold) continue;
      const Mask& pred = predictions[i].masks[k];
      if (pred.size() != gold->size())
        throw Error("evaluate: predicted " + std::string(to_string(a)) + " mask for '" + data[i].id + "' has length " +
                    std::to_string(pred.size()) + ", expected " + std::to_string(gold->size()));
      segments += double(segment_count(pred));
      pairs.push_back({pred, *gold});
    }
    if (!pairs.empty()) {
      ar.span_pairs = pairs.size();
      ar.tf1 = token_f1(pairs);
      const LcsF1 l = lcsf1_detail(pairs);
      ar.skipped_empty_gold = l.skipped_empty_gold;
      if (l.included) ar.lcsf1 = l.score;
      ar.mean_segments = segments / double(pairs.size());
    }
    if (with_classes) {
      std::vector<std::size_t> preds, golds;
      for (std::size_t i = 0; i < data.size(); ++i) {
        preds.push_back((*predictions[i].classes)[k]);
        golds.push_back(data[i].labels[k]);
      }
      ar.classification_f1 = classification_f1(preds, golds, class_count(a));
    }
  }
  report.macro_tf1 = mean_of(report.attributes, &AttributeReport::tf1);
  report.macro_lcsf1 = mean_of(report.attributes, &AttributeReport::lcsf1);
  report.macro_classification_f1 = mean_of(report.attributes, &AttributeReport::classification_f1);
  return report;
}

std::vector<Prediction> oracle_predictions(const Dataset& data) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (const auto& dp : data) {
    Prediction p;
    for (Attribute a : kAttributes) {
      const auto k = static_cast<std::size_t>(a);
      p.masks[k] = dp.gold_mask(a).value_or(Mask(dp.length(), 0));
    }
    p.classes = dp.labels;
    out.push_back(std::move(p));
  }
  return out;
}

std::string EvalReport::to_json() const {
  using ojson = nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  ojson j;
  j["system"] = system;
  j["examples"] = examples;
  j["span_examples"] = span_examples;
  ojson attrs = ojson::object();
  for (Attribute a : kAttributes) {
    const auto& ar = attributes[static_cast<std::size_t>(a)];
    attrs[std::string(to_string(a))] = {{"tf1", opt(ar.tf1)},
                                        {"lcsf1", opt(ar.lcsf1)},
                                        {"classification_f1", opt(ar.classification_f1)},
                                        {"mean_segments", opt(ar.mean_segments)},
                                        {"span_pairs", ar.span_pairs},
                                        {"skipped_empty_gold", ar.skipped_empty_gold}};
  }
  j["attributes"] = std::move(attrs);
  j["macro"] = {{"tf1", opt(macro_tf1)},
                {"lcsf1", opt(macro_lcsf1)},
                {"classification_f1", opt(macro_classification_f1)}};
  return j.dump();
}

std::string EvalReport::to_table() const {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("     -");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%6.3f", *v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "system: " << system << "  examples: " << examples << "  span-labeled: " << span_examples << "\n";
  out << "attribute     TF1  LCSF1  ClsF1  segs  skipped\n";
  for (Attribute a : kAttributes) {
    const auto& ar = attributes[static_cast<std::size_t>(a)];
    char name[16];
    std::snprintf(name, sizeof name, "%-9s", std::string(to_string(a)).c_str());
    out << name << " " << cell(ar.tf1) << " " << cell(ar.lcsf1) << " " << cell(ar.classification_f1) << " "
        << cell(ar.mean_segments) << "  " << ar.skipped_empty_gold << "\n";
  }
  out << "macro     " << cell(macro_tf1) << " " << cell(macro_lcsf1) << " " << cell(macro_classification_f1) << "\n";
  return out.str();
}

}  // namespace wsx
