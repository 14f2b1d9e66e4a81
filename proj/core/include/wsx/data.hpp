#pragma once

// Dataset schema, record-format IO, the synthetic dialogue generator and
// stratified splitting.

#include "wsx/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace wsx {

enum class Attribute : std::size_t { frequency = 0, route = 1, change = 2 };

inline constexpr std::size_t kNumAttributes = 3;
inline constexpr std::array<Attribute, kNumAttributes> kAttributes = {Attribute::frequency, Attribute::route,
                                                                      Attribute::change};

std::string_view to_string(Attribute a);
Attribute parse_attribute(std::string_view name);

/// Normalized class names, in the canonical order used for class ids.
std::span<const std::string_view> class_names(Attribute a);
std::size_t class_count(Attribute a);
/// Class id for a name; throws with the offending value when unknown.
std::size_t class_id(Attribute a, std::string_view name);
std::string_view class_name(Attribute a, std::size_t id);

/// Id of the "None" class of an attribute (no evidence in text).
std::size_t none_class(Attribute a);

enum class Speaker : std::uint8_t { doctor = 0, patient = 1, caregiver = 2, nurse = 3 };
inline constexpr std::size_t kNumSpeakers = 4;

std::string_view speaker_code(Speaker s);  // DR, PT, CG, RN
Speaker parse_speaker(std::string_view code);

using Mask = std::vector<std::uint8_t>;
using Span = std::pair<std::size_t, std::size_t>;  // [start, end)

Mask spans_to_mask(std::span<const Span> spans, std::size_t length);
std::vector<Span> mask_to_spans(const Mask& mask);

struct Utterance {
  Speaker speaker = Speaker::doctor;
  std::vector<std::string> tokens;
};

struct MedicationMention {
  std::vector<std::string> tokens;
  std::size_t start = 0;  // flat token index, inclusive
  std::size_t end = 0;    // exclusive
};

struct DataPoint {
  std::string id;
  std::vector<Utterance> utterances;
  MedicationMention medication;
  std::array<std::size_t, kNumAttributes> labels{};
  /// Gold spans per attribute; nullopt when the attribute carries no span annotation.
  std::array<std::optional<std::vector<Span>>, kNumAttributes> spans;

  // Derived on load / construction.
  std::vector<std::string> tokens;
  std::vector<std::size_t> speakers;

  void derive();
  std::size_t length() const noexcept { return tokens.size(); }
  bool has_span_labels() const;
  std::optional<Mask> gold_mask(Attribute a) const;
  /// Throws wsx::Error naming the violated field.
  void validate() const;
};

using Dataset = std::vector<DataPoint>;

// ---- record format --------------------------------------------------------

std::string to_record(const DataPoint& dp);
DataPoint parse_record(std::string_view line);
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset parse_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::istream& in);

// ---- synthetic generator --------------------------------------------------

enum class ClassDistribution { table2, uniform };

std::string_view to_string(ClassDistribution d);
ClassDistribution parse_class_distribution(std::string_view name);

struct GeneratorConfig {
  std::size_t n_examples = 2000;
  double span_label_fraction = 1.0;
  double multi_medication_fraction = 0.773;
  std::array<double, kNumAttributes> label_noise_rates = {0.22, 0.36, 0.15};
  ClassDistribution class_distribution = ClassDistribution::table2;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Class proportions in the real corpus, in class-id order (percent).
std::span<const double> table2_proportions(Attribute a);

/// Surface phrases the generator realizes for a class (empty for None).
const std::vector<std::vector<std::string>>& surface_phrases(Attribute a, std::size_t class_id);

/// Fictional medication names used by the generator.
const std::vector<std::vector<std::string>>& medication_names();

/// True when the text mentions a known medication other than the target.
bool mentions_other_medication(const DataPoint& dp);

Dataset generate(const GeneratorConfig& cfg);

// ---- splitting ------------------------------------------------------------

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Seeded, disjoint split stratified by change class. Sizes are exact:
/// validation and test get round(fraction * n), train the remainder.
DatasetSplits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// Drops span annotations from all but `keep` examples chosen by seed.
void limit_span_labels(Dataset& data, std::size_t keep, std::uint64_t seed);

}  // namespace wsx
