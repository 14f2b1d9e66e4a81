#include "wsx/baseline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace wsx {

namespace {

std::size_t idx(Attribute a) { return static_cast<std::size_t>(a); }

Phrase split_words(std::string_view text) {
  Phrase out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

Lexicon::Lexicon() {
  for (Attribute a : kAttributes) table_[idx(a)].assign(class_count(a), {});
}

const std::vector<Phrase>& Lexicon::phrases(Attribute a, std::size_t class_id) const {
  const auto& row = table_[idx(a)];
  if (class_id >= row.size())
    throw Error(std::string(to_string(a)) + " class id " + std::to_string(class_id) + " out of range");
  return row[class_id];
}

void Lexicon::add(Attribute a, std::size_t class_id, Phrase phrase) {
  if (phrase.empty()) throw Error("lexicon: empty phrase");
  auto& row = table_[idx(a)];
  if (class_id >= row.size())
    throw Error(std::string(to_string(a)) + " class id " + std::to_string(class_id) + " out of range");
  for (auto& w : phrase) w = lower(w);
  row[class_id].push_back(std::move(phrase));
}

void Lexicon::clear() {
  for (auto& row : table_)
    for (auto& cls : row) cls.clear();
}

Lexicon default_lexicon() {
  Lexicon lex;
  auto put = [&](Attribute a, std::string_view cls, std::initializer_list<std::string_view> list) {
    for (auto p : list) lex.add(a, class_id(a, cls), split_words(p));
  };
  using A = Attribute;
  put(A::frequency, "Every morning", {"everyday in the morning", "every morning", "morning"});
  put(A::frequency, "At Bedtime",
      {"everyday before sleeping", "everyday after dinner", "every night", "after dinner", "at bedtime",
       "before sleeping"});
  put(A::frequency, "Twice a day",
      {"twice a day", "2 times a day", "two times a day", "2 times per day", "two times per day"});
  put(A::frequency, "Three times a day", {"3 times a day", "3 times per day", "3 times every day"});
  put(A::frequency, "Every six hours", {"every 6 hours", "every six hours"});
  put(A::frequency, "Every week", {"every week", "weekly", "once a week"});
  put(A::frequency, "Twice a week",
      {"twice a week", "two times a week", "2 times a week", "twice per week", "two times per week",
       "2 times per week"});
  put(A::frequency, "Three times a week", {"3 times a week", "3 times per week"});
  put(A::frequency, "Every month", {"every month", "monthly", "once a month"});

  put(A::route, "Pill", {"tablet", "pill", "capsule", "mg"});
  put(A::route, "Injection", {"pen", "shot", "injector", "injection", "inject"});
  put(A::route, "Topical cream", {"cream", "gel", "ointment", "lotion"});
  put(A::route, "Nasal spray", {"spray", "nasal"});
  put(A::route, "Medicated patch", {"patch"});
  put(A::route, "Ophthalmic solution", {"ophthalmic", "drops", "drop"});
  put(A::route, "Oral solution", {"oral solution"});

  put(A::change, "Take", {"take", "start", "put you on", "continue"});
  put(A::change, "Stop", {"stop", "off"});
  put(A::change, "Increase", {"increase"});
  put(A::change, "Decrease", {"reduce", "decrease"});
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon '" + path.string() + "'");
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw Error(path.string() + ": line " + std::to_string(lineno) + ": expected attribute<TAB>class<TAB>phrase");
    try {
      const Attribute a = parse_attribute(line.substr(0, t1));
      const std::size_t c = class_id(a, line.substr(t1 + 1, t2 - t1 - 1));
      lex.add(a, c, split_words(line.substr(t2 + 1)));
    } catch (const Error& e) {
      throw Error(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return lex;
}

void save_lexicon(const Lexicon& lex, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  for (Attribute a : kAttributes) {
    for (std::size_t c = 0; c < class_count(a); ++c) {
      for (const auto& p : lex.phrases(a, c)) {
        out << to_string(a) << '\t' << class_name(a, c) << '\t';
        for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << p[i];
        out << '\n';
      }
    }
  }
}

PhraseMatch phrase_extract(std::span<const std::string> tokens, Attribute a, const Lexicon& lex) {
  std::vector<std::string> low(tokens.size());
  std::transform(tokens.begin(), tokens.end(), low.begin(), [](const std::string& t) { return lower(t); });

  PhraseMatch best;
  std::size_t best_len = 0, best_start = 0, best_class = 0;
  for (std::size_t c = 0; c < class_count(a); ++c) {
    for (const auto& phrase : lex.phrases(a, c)) {
      const std::size_t len = phrase.size();
      if (len > low.size()) continue;
      for (std::size_t s = 0; s + len <= low.size(); ++s) {
        if (!std::equal(phrase.begin(), phrase.end(), low.begin() + long(s))) continue;
        const bool better = len > best_len || (len == best_len && best_len > 0 &&
                                               (s < best_start || (s == best_start && c < best_class)));
        if (better) {
          best_len = len;
          best_start = s;
          best_class = c;
        }
        break;  // later occurrences of the same phrase never win
      }
    }
  }
  best.mask.assign(tokens.size(), 0);
  if (best_len > 0) {
    best.class_id = best_class;
    best.span = Span{best_start, best_start + best_len};
    std::fill(best.mask.begin() + long(best_start), best.mask.begin() + long(best_start + best_len), 1);
  }
  return best;
}

std::vector<Prediction> baseline_predictions(const Dataset& data, const Lexicon& lex) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (const auto& dp : data) {
    Prediction p;
    for (Attribute a : kAttributes) p.masks[idx(a)] = phrase_extract(dp.tokens, a, lex).mask;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace wsx
