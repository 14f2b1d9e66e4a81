#include "wsx/data.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace wsx {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 12> kFrequencyClasses = {
    "Daily",        "Every morning", "At Bedtime",         "Twice a day", "Three times a day", "Every six hours",
    "Every week",   "Twice a week",  "Three times a week", "Every month", "Other",             "None"};
constexpr std::array<std::string_view, 10> kRouteClasses = {
    "Pill",        "Injection", "Topical cream", "Nasal spray", "Medicated patch", "Ophthalmic solution",
    "Inhaler",     "Oral solution", "Other",     "None"};
constexpr std::array<std::string_view, 6> kChangeClasses = {"Take", "Stop", "Increase", "Decrease", "None", "Other"};

constexpr std::array<double, 12> kFrequencyShare = {8.0, 0.9, 1.7, 6.5, 1.6, 0.2, 0.9, 0.2, 0.3, 0.3, 1.5, 77.9};
constexpr std::array<double, 10> kRouteShare = {6.8, 3.5, 1.0, 0.5, 0.2, 0.2, 0.2, 0.1, 2.1, 85.5};
constexpr std::array<double, 6> kChangeShare = {83.1, 6.5, 5.2, 2.0, 1.6, 1.4};

std::size_t idx(Attribute a) { return static_cast<std::size_t>(a); }

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

using Phrases = std::vector<std::vector<std::string>>;

Phrases phrases(std::initializer_list<std::string_view> list) {
  Phrases out;
  for (auto p : list) out.push_back(words(p));
  return out;
}

// Surface realizations per class. Classes with lexicon entries use exactly
// those phrases; the rest get plausible phrasings outside the lexicon.
const std::array<std::vector<Phrases>, kNumAttributes>& phrase_bank() {
  static const std::array<std::vector<Phrases>, kNumAttributes> bank = {
      std::vector<Phrases>{
          phrases({"once a day", "daily", "one time a day"}),
          phrases({"everyday in the morning", "every morning", "morning"}),
          phrases({"everyday before sleeping", "everyday after dinner", "every night", "after dinner", "at bedtime",
                   "before sleeping"}),
          phrases({"twice a day", "2 times a day", "two times a day", "2 times per day", "two times per day"}),
          phrases({"3 times a day", "3 times per day", "3 times every day"}),
          phrases({"every 6 hours", "every six hours"}),
          phrases({"every week", "weekly", "once a week"}),
          phrases({"twice a week", "two times a week", "2 times a week", "twice per week", "two times per week",
                   "2 times per week"}),
          phrases({"3 times a week", "3 times per week"}),
          phrases({"every month", "monthly", "once a month"}),
          phrases({"as needed", "every other day", "when the pain gets bad"}),
          Phrases{},
      },
      std::vector<Phrases>{
          phrases({"tablet", "pill", "capsule", "mg"}),
          phrases({"pen", "shot", "injector", "injection", "inject"}),
          phrases({"cream", "gel", "ointment", "lotion"}),
          phrases({"spray", "nasal"}),
          phrases({"patch"}),
          phrases({"ophthalmic", "drops", "drop"}),
          phrases({"inhaler", "puffs", "puffer"}),
          phrases({"oral solution"}),
          phrases({"suppository", "under the tongue", "lozenge"}),
          Phrases{},
      },
      std::vector<Phrases>{
          phrases({"take", "start", "put you on", "continue"}),
          phrases({"stop", "off"}),
          phrases({"increase"}),
          phrases({"reduce", "decrease"}),
          Phrases{},
          phrases({"switch", "hold", "change the timing of"}),
      },
  };
  return bank;
}

// Carrier templates; "@" marks the attribute phrase slot, "#" the medication.
const std::array<std::vector<std::vector<std::string>>, kNumAttributes>& carriers() {
  static const std::array<std::vector<std::vector<std::string>>, kNumAttributes> c = {
      std::vector<std::vector<std::string>>{words("use it @"), words("you need it @"), words("one dose @ is fine"),
                                            words("have it @ please")},
      std::vector<std::vector<std::string>>{words("it is a @"), words("this one comes as a @"),
                                            words("you get the @ version"), words("we have it as @")},
      std::vector<std::vector<std::string>>{words("i want you to @ it"), words("let us @ this one"),
                                            words("we should @ it now"), words("i would @ it")},
  };
  return c;
}

const std::vector<std::vector<std::string>>& intros() {
  static const std::vector<std::vector<std::string>> v = {words("so about the #"), words("now the #"),
                                                          words("# is next"), words("for your #"),
                                                          words("let us talk about #"), words("regarding the #")};
  return v;
}

// Filler chatter; none of these words belongs to any lexicon phrase or
// medication name.
const std::vector<std::pair<Speaker, std::vector<std::string>>>& fillers() {
  static const std::vector<std::pair<Speaker, std::vector<std::string>>> v = {
      {Speaker::doctor, words("how have you been feeling lately")},
      {Speaker::patient, words("i have been sleeping okay")},
      {Speaker::doctor, words("any pain in your back")},
      {Speaker::patient, words("no not really")},
      {Speaker::patient, words("okay")},
      {Speaker::doctor, words("that sounds good")},
      {Speaker::nurse, words("let me check your blood pressure")},
      {Speaker::doctor, words("your labs look fine")},
      {Speaker::doctor, words("did you bring the list")},
      {Speaker::patient, words("yes i did")},
      {Speaker::doctor, words("we can talk about your diet")},
      {Speaker::patient, words("my knee still hurts a bit")},
      {Speaker::doctor, words("are you drinking enough water")},
      {Speaker::patient, words("i try to walk a lot")},
      {Speaker::doctor, words("good keep that up")},
      {Speaker::doctor, words("any questions so far")},
      {Speaker::patient, words("not right now")},
      {Speaker::caregiver, words("my daughter helps me with that")},
      {Speaker::caregiver, words("he forgets sometimes")},
      {Speaker::nurse, words("the clinic will call you")},
      {Speaker::patient, words("alright thank you")},
      {Speaker::doctor, words("mm hmm")},
      {Speaker::patient, words("uh i think so")},
      {Speaker::nurse, words("your weight is about the same")},
      {Speaker::doctor, words("we will see you again soon")},
      {Speaker::caregiver, words("she has been more tired")},
      {Speaker::patient, words("the pharmacy was closed")},
      {Speaker::doctor, words("that is normal for your age")},
  };
  return v;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(msg);
}

}  // namespace

std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::frequency: return "frequency";
    case Attribute::route: return "route";
    case Attribute::change: return "change";
  }
  return "?";
}

Attribute parse_attribute(std::string_view name) {
  for (Attribute a : kAttributes)
    if (to_string(a) == name) return a;
  throw Error("unknown attribute '" + std::string(name) + "'");
}

std::span<const std::string_view> class_names(Attribute a) {
  switch (a) {
    case Attribute::frequency: return kFrequencyClasses;
    case Attribute::route: return kRouteClasses;
    case Attribute::change: return kChangeClasses;
  }
  return {};
}

std::size_t class_count(Attribute a) { return class_names(a).size(); }

std::size_t class_id(Attribute a, std::string_view name) {
  const auto names = class_names(a);
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end())
    throw Error("unknown " + std::string(to_string(a)) + " class '" + std::string(name) + "'");
  return std::size_t(it - names.begin());
}

std::string_view class_name(Attribute a, std::size_t id) {
  const auto names = class_names(a);
  if (id >= names.size())
    throw Error(std::string(to_string(a)) + " class id " + std::to_string(id) + " out of range");
  return names[id];
}

std::size_t none_class(Attribute a) { return class_id(a, "None"); }

std::span<const double> table2_proportions(Attribute a) {
  switch (a) {
    case Attribute::frequency: return kFrequencyShare;
    case Attribute::route: return kRouteShare;
    case Attribute::change: return kChangeShare;
  }
  return {};
}

std::string_view speaker_code(Speaker s) {
  static constexpr std::array<std::string_view, kNumSpeakers> codes = {"DR", "PT", "CG", "RN"};
  return codes[static_cast<std::size_t>(s)];
}

Speaker parse_speaker(std::string_view code) {
  for (std::size_t i = 0; i < kNumSpeakers; ++i)
    if (speaker_code(Speaker(i)) == code) return Speaker(i);
  throw Error("unknown speaker '" + std::string(code) + "' (expected DR, PT, CG or RN)");
}

Mask spans_to_mask(std::span<const Span> spans, std::size_t length) {
  Mask m(length, 0);
  for (const auto& [b, e] : spans) {
    if (b >= e || e > length)
      throw Error("span [" + std::to_string(b) + "," + std::to_string(e) + ") invalid for length " +
                  std::to_string(length));
    for (std::size_t i = b; i < e; ++i) m[i] = 1;
  }
  return m;
}

std::vector<Span> mask_to_spans(const Mask& mask) {
  std::vector<Span> out;
  for (std::size_t i = 0; i < mask.size();) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < mask.size() && mask[j]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

// ---- DataPoint ------------------------------------------------------------

void DataPoint::derive() {
  tokens.clear();
  speakers.clear();
  for (const auto& u : utterances) {
    for (const auto& t : u.tokens) {
      tokens.push_back(t);
      speakers.push_back(static_cast<std::size_t>(u.speaker));
    }
  }
}

bool DataPoint::has_span_labels() const {
  return std::any_of(spans.begin(), spans.end(), [](const auto& s) { return s.has_value(); });
}

std::optional<Mask> DataPoint::gold_mask(Attribute a) const {
  const auto& s = spans[idx(a)];
  if (!s) return std::nullopt;
  return spans_to_mask(*s, tokens.size());
}

void DataPoint::validate() const {
  require(!id.empty(), "field id: empty");
  require(!utterances.empty(), "field utterances: empty");
  std::size_t n = 0;
  for (const auto& u : utterances) {
    require(!u.tokens.empty(), "field utterances: utterance without tokens");
    n += u.tokens.size();
  }
  require(tokens.size() == n, "derived tokens out of date");
  require(medication.start < medication.end && medication.end <= n,
          "field medication: span [" + std::to_string(medication.start) + "," + std::to_string(medication.end) +
              ") invalid for " + std::to_string(n) + " tokens");
  require(std::equal(medication.tokens.begin(), medication.tokens.end(), tokens.begin() + long(medication.start),
                     tokens.begin() + long(medication.end)) &&
              medication.tokens.size() == medication.end - medication.start,
          "field medication: tokens do not match the text at [start,end)");
  for (Attribute a : kAttributes) {
    require(labels[idx(a)] < class_count(a), "field labels." + std::string(to_string(a)) + ": class id out of range");
    if (const auto& s = spans[idx(a)]) {
      for (const auto& [b, e] : *s) {
        require(b < e && e <= n, "field spans." + std::string(to_string(a)) + ": [" + std::to_string(b) + "," +
                                     std::to_string(e) + ") invalid for " + std::to_string(n) + " tokens");
      }
    }
  }
}

// ---- record format --------------------------------------------------------

std::string to_record(const DataPoint& dp) {
  ojson j;
  j["id"] = dp.id;
  ojson utts = ojson::array();
  for (const auto& u : dp.utterances) {
    ojson ju;
    ju["speaker"] = speaker_code(u.speaker);
    ju["tokens"] = u.tokens;
    utts.push_back(std::move(ju));
  }
  j["utterances"] = std::move(utts);
  j["medication"] = {{"tokens", dp.medication.tokens}, {"start", dp.medication.start}, {"end", dp.medication.end}};
  ojson labels;
  for (Attribute a : kAttributes) labels[std::string(to_string(a))] = class_name(a, dp.labels[idx(a)]);
  j["labels"] = std::move(labels);
  if (dp.has_span_labels()) {
    ojson spans = ojson::object();
    for (Attribute a : kAttributes) {
      if (const auto& s = dp.spans[idx(a)]) {
        ojson list = ojson::array();
        for (const auto& [b, e] : *s) list.push_back({b, e});
        spans[std::string(to_string(a))] = std::move(list);
      }
    }
    j["spans"] = std::move(spans);
  }
  return j.dump();
}

namespace {

void only_fields(const ojson& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  require(j.is_object(), where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(where + ": unknown field '" + key + "'");
  }
}

const ojson& field(const ojson& j, const char* name, const std::string& where) {
  const auto it = j.find(name);
  if (it == j.end()) throw Error(where + ": missing field '" + name + "'");
  return *it;
}

std::vector<std::string> string_list(const ojson& j, const std::string& where) {
  require(j.is_array(), where + ": expected a list of strings");
  std::vector<std::string> out;
  for (const auto& t : j) {
    require(t.is_string(), where + ": expected a list of strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

std::size_t index_value(const ojson& j, const std::string& where) {
  require(j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0),
          where + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

}  // namespace

DataPoint parse_record(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("malformed record: ") + e.what());
  }
  only_fields(j, {"id", "utterances", "medication", "labels", "spans"}, "record");

  DataPoint dp;
  const auto& id = field(j, "id", "record");
  require(id.is_string(), "field id: expected a string");
  dp.id = id.get<std::string>();

  const auto& utts = field(j, "utterances", "record");
  require(utts.is_array(), "field utterances: expected a list");
  for (const auto& ju : utts) {
    only_fields(ju, {"speaker", "tokens"}, "field utterances");
    const auto& sp = field(ju, "speaker", "field utterances");
    require(sp.is_string(), "field utterances.speaker: expected a string");
    Utterance u;
    u.speaker = parse_speaker(sp.get<std::string>());
    u.tokens = string_list(field(ju, "tokens", "field utterances"), "field utterances.tokens");
    dp.utterances.push_back(std::move(u));
  }

  const auto& med = field(j, "medication", "record");
  only_fields(med, {"tokens", "start", "end"}, "field medication");
  dp.medication.tokens = string_list(field(med, "tokens", "field medication"), "field medication.tokens");
  dp.medication.start = index_value(field(med, "start", "field medication"), "field medication.start");
  dp.medication.end = index_value(field(med, "end", "field medication"), "field medication.end");

  const auto& labels = field(j, "labels", "record");
  only_fields(labels, {"frequency", "route", "change"}, "field labels");
  for (Attribute a : kAttributes) {
    const std::string where = "field labels." + std::string(to_string(a));
    const auto& v = field(labels, std::string(to_string(a)).c_str(), "field labels");
    require(v.is_string(), where + ": expected a class name");
    try {
      dp.labels[idx(a)] = class_id(a, v.get<std::string>());
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }

  if (const auto it = j.find("spans"); it != j.end()) {
    only_fields(*it, {"frequency", "route", "change"}, "field spans");
    for (Attribute a : kAttributes) {
      const auto f = it->find(std::string(to_string(a)));
      if (f == it->end()) continue;
      const std::string where = "field spans." + std::string(to_string(a));
      require(f->is_array(), where + ": expected a list of [start,end) pairs");
      std::vector<Span> list;
      for (const auto& p : *f) {
        require(p.is_array() && p.size() == 2, where + ": expected a list of [start,end) pairs");
        list.emplace_back(index_value(p[0], where), index_value(p[1], where));
      }
      dp.spans[idx(a)] = std::move(list);
    }
  }
  dp.derive();
  dp.validate();
  return dp;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  for (const auto& dp : data) out << to_record(dp) << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Dataset parse_dataset(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      throw Error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Dataset parse_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path.string() + "'");
  try {
    return parse_dataset(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---- generator ------------------------------------------------------------

std::string_view to_string(ClassDistribution d) { return d == ClassDistribution::table2 ? "table2" : "uniform"; }

ClassDistribution parse_class_distribution(std::string_view name) {
  if (name == "table2") return ClassDistribution::table2;
  if (name == "uniform") return ClassDistribution::uniform;
  throw Error("unknown class distribution '" + std::string(name) + "' (expected table2 or uniform)");
}

void GeneratorConfig::validate() const {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  require(n_examples > 0, "GeneratorConfig: n_examples must be > 0");
  require(unit(span_label_fraction), "GeneratorConfig: span_label_fraction must be in [0,1]");
  require(unit(multi_medication_fraction), "GeneratorConfig: multi_medication_fraction must be in [0,1]");
  for (double r : label_noise_rates) require(unit(r), "GeneratorConfig: label noise rates must be in [0,1]");
}

const std::vector<std::vector<std::string>>& surface_phrases(Attribute a, std::size_t id) {
  const auto& bank = phrase_bank()[idx(a)];
  if (id >= bank.size()) throw Error(std::string(to_string(a)) + " class id " + std::to_string(id) + " out of range");
  return bank[id];
}

const std::vector<std::vector<std::string>>& medication_names() {
  static const std::vector<std::vector<std::string>> names = [] {
    std::vector<std::vector<std::string>> v;
    for (auto n : {"zorvatin", "plemax", "kelodrine", "vastorin xr", "amdulin", "corvexa", "trilopam", "nexiflor",
                   "dartomide", "lumivex", "quenzapril", "bristafen", "solvadex hcl", "moxilane", "feronix",
                   "ulvarest", "tesmoril", "ganavir", "helicort", "pravulex", "ostrafen sodium", "cindrelex",
                   "velaxor er", "rumatide", "jorvacin", "kyvanta plus", "ximorel", "adrevan", "belotrex",
                   "norvalin b twelve", "zentraxa", "milvorin", "ambrexin long acting release"})
      v.push_back(words(n));
    return v;
  }();
  return names;
}

bool mentions_other_medication(const DataPoint& dp) {
  for (const auto& name : medication_names()) {
    if (name == dp.medication.tokens) continue;
    const auto it = std::search(dp.tokens.begin(), dp.tokens.end(), name.begin(), name.end());
    if (it != dp.tokens.end()) return true;
  }
  return false;
}

namespace {

struct Block {
  std::vector<Utterance> utterances;
  // Spans relative to the first token of the block.
  std::array<std::optional<Span>, kNumAttributes> phrase_spans;
  Span medication{0, 0};
  bool target = false;
};

class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg) : cfg_(cfg), rng_(cfg.seed), noise_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {}

  DataPoint example(std::size_t index) {
    std::array<std::size_t, kNumAttributes> gold{};
    for (Attribute a : kAttributes) gold[idx(a)] = sample_class(a);

    const auto& names = medication_names();
    std::vector<std::size_t> meds(names.size());
    std::iota(meds.begin(), meds.end(), 0);
    std::shuffle(meds.begin(), meds.end(), rng_);
    const std::size_t n_distractors = coin(cfg_.multi_medication_fraction) ? 1 + pick(2) : 0;

    std::vector<Block> blocks;
    Block target = medication_block(names[meds[0]], gold, nullptr);
    target.target = true;
    blocks.push_back(target);
    std::array<std::vector<std::vector<std::string>>, kNumAttributes> taken;
    for (Attribute a : kAttributes) {
      if (const auto& s = target.phrase_spans[idx(a)]) taken[idx(a)].push_back(phrase_of(target, *s));
    }
    for (std::size_t d = 0; d < n_distractors; ++d) {
      std::array<std::size_t, kNumAttributes> cls{};
      for (Attribute a : kAttributes) cls[idx(a)] = distractor_class(a, gold[idx(a)]);
      Block b = medication_block(names[meds[d + 1]], cls, &taken);
      for (Attribute a : kAttributes) {
        if (const auto& s = b.phrase_spans[idx(a)]) taken[idx(a)].push_back(phrase_of(b, *s));
      }
      blocks.push_back(std::move(b));
    }
    std::shuffle(blocks.begin() + 1, blocks.end(), rng_);

    // Interleave filler chatter up to a sampled utterance budget.
    std::size_t block_utts = 0;
    for (const auto& b : blocks) block_utts += b.utterances.size();
    const std::size_t n_fill = std::max<std::size_t>(1 + pick(6), block_utts < 3 ? 3 - block_utts : 0);

    std::vector<std::size_t> fill_before(blocks.size() + 1, 0);
    for (std::size_t f = 0; f < n_fill; ++f) ++fill_before[pick(fill_before.size())];

    DataPoint dp;
    dp.id = "syn-" + std::to_string(cfg_.seed) + "-" + std::to_string(index);
    std::size_t offset = 0;
    auto add_fillers = [&](std::size_t k) {
      for (std::size_t f = 0; f < k; ++f) {
        const auto& [sp, toks] = fillers()[pick(fillers().size())];
        dp.utterances.push_back({sp, toks});
        offset += toks.size();
      }
    };
    const Block* target_ptr = nullptr;
    std::size_t target_offset = 0;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      add_fillers(fill_before[bi]);
      if (blocks[bi].target) {
        target_ptr = &blocks[bi];
        target_offset = offset;
      }
      for (const auto& u : blocks[bi].utterances) {
        dp.utterances.push_back(u);
        offset += u.tokens.size();
      }
    }
    add_fillers(fill_before.back());
    dp.derive();

    dp.medication.start = target_offset + target_ptr->medication.first;
    dp.medication.end = target_offset + target_ptr->medication.second;
    dp.medication.tokens.assign(dp.tokens.begin() + long(dp.medication.start), dp.tokens.begin() + long(dp.medication.end));
    for (Attribute a : kAttributes) {
      std::vector<Span> list;
      if (const auto& s = target_ptr->phrase_spans[idx(a)]) list.emplace_back(target_offset + s->first, target_offset + s->second);
      dp.spans[idx(a)] = std::move(list);
      dp.labels[idx(a)] = gold[idx(a)];
    }
    // Label noise: the text keeps the original evidence, only the label
    // moves. A separate stream keeps the text independent of the noise rates.
    for (Attribute a : kAttributes) {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(noise_rng_);
      const std::size_t n = class_count(a);
      std::size_t other = std::uniform_int_distribution<std::size_t>(0, n - 2)(noise_rng_);
      if (u < cfg_.label_noise_rates[idx(a)]) {
        if (other >= gold[idx(a)]) ++other;
        dp.labels[idx(a)] = other;
      }
    }
    return dp;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  std::size_t sample_class(Attribute a) {
    if (cfg_.class_distribution == ClassDistribution::uniform) return pick(class_count(a));
    const auto share = table2_proportions(a);
    std::discrete_distribution<std::size_t> d(share.begin(), share.end());
    return d(rng_);
  }

  std::size_t distractor_class(Attribute a, std::size_t target_class) {
    const std::size_t none = none_class(a);
    if (coin(0.25)) return none;
    std::vector<std::size_t> options;
    for (std::size_t c = 0; c < class_count(a); ++c)
      if (c != none && c != target_class) options.push_back(c);
    return options[pick(options.size())];
  }

  static std::vector<std::string> phrase_of(const Block& b, Span s) {
    std::vector<std::string> flat;
    for (const auto& u : b.utterances) flat.insert(flat.end(), u.tokens.begin(), u.tokens.end());
    return {flat.begin() + long(s.first), flat.begin() + long(s.second)};
  }

  Block medication_block(const std::vector<std::string>& name, const std::array<std::size_t, kNumAttributes>& cls,
                         const std::array<std::vector<std::vector<std::string>>, kNumAttributes>* taken) {
    Block b;
    std::vector<std::string> first;
    const auto& intro = intros()[pick(intros().size())];
    for (const auto& w : intro) {
      if (w == "#") {
        b.medication = {first.size(), first.size() + name.size()};
        first.insert(first.end(), name.begin(), name.end());
      } else {
        first.push_back(w);
      }
    }

    std::vector<Attribute> order(kAttributes.begin(), kAttributes.end());
    std::shuffle(order.begin(), order.end(), rng_);
    // Clauses go into the intro utterance or a second doctor utterance.
    std::vector<std::string> second;
    std::size_t second_base = 0;
    const bool split = coin(0.4);
    std::array<std::optional<std::pair<bool, Span>>, kNumAttributes> where;
    for (Attribute a : order) {
      const auto& options = phrase_bank()[idx(a)][cls[idx(a)]];
      if (options.empty()) continue;
      std::vector<std::size_t> allowed;
      for (std::size_t i = 0; i < options.size(); ++i) {
        bool clash = false;
        if (taken)
          for (const auto& t : (*taken)[idx(a)]) clash = clash || t == options[i];
        if (!clash) allowed.push_back(i);
      }
      if (allowed.empty()) continue;
      const auto& phrase = options[allowed[pick(allowed.size())]];
      const auto& carrier = carriers()[idx(a)][pick(carriers()[idx(a)].size())];
      const bool in_second = split && !second.empty() ? coin(0.7) : (split && coin(0.5));
      auto& target = in_second ? second : first;
      for (const auto& w : carrier) {
        if (w == "@") {
          where[idx(a)] = std::make_pair(in_second, Span{target.size(), target.size() + phrase.size()});
          target.insert(target.end(), phrase.begin(), phrase.end());
        } else {
          target.push_back(w);
        }
      }
    }
    b.utterances.push_back({Speaker::doctor, first});
    if (!second.empty()) {
      if (coin(0.3)) b.utterances.push_back({Speaker::patient, {"okay"}});
      second_base = 0;
      for (const auto& u : b.utterances) second_base += u.tokens.size();
      b.utterances.push_back({Speaker::doctor, second});
    }
    for (Attribute a : kAttributes) {
      if (!where[idx(a)]) continue;
      const auto [sec, s] = *where[idx(a)];
      const std::size_t base = sec ? second_base : 0;
      b.phrase_spans[idx(a)] = Span{base + s.first, base + s.second};
    }
    return b;
  }

  GeneratorConfig cfg_;
  std::mt19937_64 rng_;
  std::mt19937_64 noise_rng_;
};

}  // namespace

Dataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Generator gen(cfg);
  Dataset out;
  out.reserve(cfg.n_examples);
  for (std::size_t i = 0; i < cfg.n_examples; ++i) out.push_back(gen.example(i));

  const auto keep = std::size_t(std::llround(cfg.span_label_fraction * double(cfg.n_examples)));
  std::vector<std::size_t> order(out.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen.rng());
  for (std::size_t i = keep; i < order.size(); ++i) out[order[i]].spans = {};
  for (const auto& dp : out) dp.validate();
  return out;
}

// ---- splitting ------------------------------------------------------------

DatasetSplits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) require(f >= 0.0 && f <= 1.0, "split: fractions must be in [0,1]");
  require(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) <= 1e-9, "split: fractions must sum to 1");
  const std::size_t n = data.size();
  std::array<std::size_t, 3> target{};
  target[1] = std::size_t(std::llround(fractions[1] * double(n)));
  target[2] = std::size_t(std::llround(fractions[2] * double(n)));
  require(target[1] + target[2] <= n, "split: fractions exceed the dataset size");
  target[0] = n - target[1] - target[2];
  for (std::size_t s = 0; s < 3; ++s) {
    if (target[s] == 0) throw Error("split: split " + std::to_string(s) + " would be empty");
  }

  // Strata by change class, each shuffled, then dealt in sequence to the
  // split with the largest deficit against its quota.
  std::mt19937_64 rng(seed);
  const std::size_t n_change = class_count(Attribute::change);
  std::vector<std::vector<std::size_t>> strata(n_change);
  for (std::size_t i = 0; i < n; ++i) strata[data[i].labels[idx(Attribute::change)]].push_back(i);
  std::vector<std::size_t> order;
  for (auto& s : strata) {
    std::shuffle(s.begin(), s.end(), rng);
    order.insert(order.end(), s.begin(), s.end());
  }
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::size_t best = 3;
    double best_deficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      if (parts[s].size() >= target[s]) continue;
      const double deficit = double(target[s]) * double(i + 1) / double(n) - double(parts[s].size());
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    parts[best].push_back(order[i]);
  }
  DatasetSplits out;
  std::array<Dataset*, 3> dst = {&out.train, &out.validation, &out.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::shuffle(parts[s].begin(), parts[s].end(), rng);
    for (std::size_t i : parts[s]) dst[s]->push_back(data[i]);
  }
  return out;
}

void limit_span_labels(Dataset& data, std::size_t keep, std::uint64_t seed) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].has_span_labels()) labeled.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  for (std::size_t i = keep; i < labeled.size(); ++i) data[labeled[i]].spans = {};
}

}  // namespace wsx
