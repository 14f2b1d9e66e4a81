#pragma once

// Extraction and classification metrics plus report assembly.

#include "wsx/data.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wsx {

struct MaskPair {
  Mask predicted;
  Mask gold;
};

/// Micro F1 of the positive class over all tokens of all pairs.
double token_f1(std::span<const MaskPair> pairs);

/// Longest run of positions where predicted and gold are both 1.
std::size_t lcs_length(const MaskPair& pair);

struct LcsF1 {
  double score = 0.0;
  std::size_t included = 0;
  std::size_t skipped_empty_gold = 0;
};

/// Mean per-pair LCS F1 over pairs with non-empty gold.
LcsF1 lcsf1_detail(std::span<const MaskPair> pairs);
double lcsf1(std::span<const MaskPair> pairs);

/// Macro F1 over classes occurring in gold or predictions.
double classification_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                         std::size_t n_classes);

/// Number of maximal runs of 1s.
std::size_t segment_count(const Mask& mask);

struct AttributeReport {
  std::optional<double> tf1;
  std::optional<double> lcsf1;
  std::optional<double> classification_f1;
  std::optional<double> mean_segments;
  std::size_t span_pairs = 0;
  std::size_t skipped_empty_gold = 0;
};

struct EvalReport {
  std::string system;
  std::size_t examples = 0;
  std::size_t span_examples = 0;
  std::array<AttributeReport, kNumAttributes> attributes;
  std::optional<double> macro_tf1;
  std::optional<double> macro_lcsf1;
  std::optional<double> macro_classification_f1;

  /// Single-line JSON record.
  std::string to_json() const;
  /// Human-readable table.
  std::string to_table() const;
};

struct Prediction {
  std::array<Mask, kNumAttributes> masks;
  std::optional<std::array<std::size_t, kNumAttributes>> classes;
};

/// Scores predictions against the dataset. Span metrics use only attributes
/// with gold span annotations; classification F1 is reported when every
/// prediction carries classes.
EvalReport evaluate_predictions(const Dataset& data, std::span<const Prediction> predictions, std::string system);

/// Predictions that echo the gold annotations.
std::vector<Prediction> oracle_predictions(const Dataset& data);

}  // namespace wsx
