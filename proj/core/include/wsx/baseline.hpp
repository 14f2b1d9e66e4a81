#pragma once

// Phrase-matching extraction baseline.

#include "wsx/data.hpp"
#include "wsx/metrics.hpp"

#include <filesystem>
#include <optional>

namespace wsx {

using Phrase = std::vector<std::string>;

class Lexicon {
 public:
  Lexicon();  // every class of every attribute starts empty

  const std::vector<Phrase>& phrases(Attribute a, std::size_t class_id) const;
  void add(Attribute a, std::size_t class_id, Phrase phrase);
  void clear();

 private:
  std::array<std::vector<std::vector<Phrase>>, kNumAttributes> table_;
};

Lexicon default_lexicon();

/// Lines of `attribute<TAB>class<TAB>phrase`; blank lines and lines starting
/// with '#' are ignored.
Lexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const Lexicon& lex, const std::filesystem::path& path);

struct PhraseMatch {
  Mask mask;
  std::optional<std::size_t> class_id;
  std::optional<Span> span;
};

/// Longest whole-word lexicon match for one attribute; ties go to the earliest
/// occurrence, then to the lower class id.
PhraseMatch phrase_extract(std::span<const std::string> tokens, Attribute a, const Lexicon& lex);

std::vector<Prediction> baseline_predictions(const Dataset& data, const Lexicon& lex);

}  // namespace wsx
