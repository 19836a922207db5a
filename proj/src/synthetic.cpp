#include "c2f/synthetic.hpp"

#include "c2f/util.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace c2f {

namespace {

struct Property {
  std::string name;
  std::vector<std::string> values;
  std::vector<std::string> codes;  // one object per value that implies it
};

const std::vector<Property>& property_table() {
  static const std::vector<Property> table = {
      {"color", {"red", "blue", "green", "yellow", "purple"}, {"cherry", "ocean", "leaf", "lemon", "plum"}},
      {"material", {"wood", "stone", "iron", "glass", "clay"}, {"forest", "quarry", "anvil", "window", "pottery"}},
      {"genre", {"jazz", "opera", "folk", "blues", "techno"}, {"saxophone", "aria", "banjo", "harmonica", "synthesizer"}},
      {"climate", {"arid", "humid", "polar", "temperate", "tropical"}, {"desert", "swamp", "glacier", "meadow", "jungle"}},
      {"size", {"tiny", "small", "medium", "large", "huge"}, {"ant", "mouse", "dog", "horse", "whale"}},
      {"birthplace",
       {"north haven", "east ridge", "south port", "west fall", "old bridge"},
       {"lighthouse", "cliff", "harbor", "waterfall", "arch"}},
  };
  return table;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "the",     "a",        "people",  "often",   "said",    "that",    "many",    "years",  "later",
      "during",  "winter",   "village", "market",  "council", "members", "met",     "again",  "before",
      "after",   "several",  "letters", "were",    "written", "about",   "local",   "history", "their",
      "family",  "moved",    "to",      "city",    "and",     "built",   "an",      "early",  "school",
      "museum",  "hosts",    "annual",  "festival", "visitors", "arrive", "by",     "train",  "from",
      "nearby",  "towns",    "it",      "was",     "known",   "for",     "its",     "quiet",  "streets",
      "critics", "praised",  "work",    "in",      "press",   "reports", "describe", "long",  "journey",
      "across",  "river",    "valley",  "friends", "recall",  "simple",  "habits",  "records", "note",
      "some",    "changes",  "over",    "time",    "archive", "keeps",   "copies",  "of",     "old",
      "maps",    "teachers", "students", "gathered", "at",    "hall",    "evening", "lessons", "began",
  };
  return words;
}

const std::vector<std::string>& syllables() {
  static const std::vector<std::string> s = {"ka", "lo", "mir", "zan", "te", "vo", "ri", "dun", "sha", "pel",
                                             "qu", "bex", "tor", "ny", "gal", "fi", "mor", "ush", "ven", "yl"};
  return s;
}

/// Filler words plus the code words, so that codes are frequent enough to be
/// in any vocabulary without ever stating a value.
const std::vector<std::string>& filler_pool() {
  static const std::vector<std::string> pool = [] {
    std::vector<std::string> v = filler_words();
    for (const auto& p : property_table()) v.insert(v.end(), p.codes.begin(), p.codes.end());
    return v;
  }();
  return pool;
}

std::string pick(const std::vector<std::string>& v, Rng& rng) { return v[uniform_below(rng, v.size())]; }

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

std::string entity_name(Rng& rng, const std::set<std::string>& reserved) {
  for (;;) {
    const int n = 3;
    std::string name;
    for (int i = 0; i < n; ++i) name += pick(syllables(), rng);
    if (!reserved.count(name)) return name;
  }
}

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> r = [] {
    std::set<std::string> s(filler_words().begin(), filler_words().end());
    for (const auto& p : property_table()) {
      s.insert(p.name);
      for (const auto& v : p.values) {
        for (const auto& t : tokenize(v)) s.insert(t);
      }
      s.insert(p.codes.begin(), p.codes.end());
    }
    for (const char* w : {"has", "is", "list", "as", "recalls", "reminiscent", "what"}) s.insert(w);
    return s;
  }();
  return r;
}

std::string filler_sentence(const GeneratorConfig& cfg, Rng& rng, const std::string* planted) {
  const int n = uniform_int(rng, cfg.filler_min_words, cfg.filler_max_words);
  std::vector<std::string> words;
  for (int i = 0; i < n; ++i) words.push_back(pick(filler_pool(), rng));
  if (planted != nullptr) {
    const auto at = uniform_below(rng, static_cast<std::uint64_t>(words.size()) + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), *planted);
  }
  std::string s;
  for (const auto& w : words) s += w + " ";
  return s + ".";
}

std::string fact_sentence(const std::string& entity, const std::string& prop, const std::string& value, Rng& rng) {
  switch (uniform_below(rng, 3)) {
    case 0: return entity + " has " + prop + " " + value + " .";
    case 1: return "the " + prop + " of " + entity + " is " + value + " .";
    default: return "records list the " + prop + " of " + entity + " as " + value + " .";
  }
}

std::string paraphrase_sentence(const std::string& entity, const std::string& prop, const std::string& code,
                                Rng& rng) {
  if (uniform_below(rng, 2) == 0) return "the " + prop + " of " + entity + " recalls a " + code + " .";
  return entity + " has a " + prop + " reminiscent of a " + code + " .";
}

int draw_position(PositionDistribution d, int sentences, Rng& rng) {
  if (d == PositionDistribution::uniform) return uniform_int(rng, 0, sentences - 1);
  // Geometric weights 0.5^i, truncated to the document.
  std::vector<double> w(static_cast<std::size_t>(sentences));
  double total = 0;
  for (int i = 0; i < sentences; ++i) total += w[static_cast<std::size_t>(i)] = std::pow(0.5, i);
  double u = uniform01(rng) * total;
  int pos = sentences - 1;
  for (int i = 0; i < sentences; ++i) {
    u -= w[static_cast<std::size_t>(i)];
    if (u < 0) {
      pos = i;
      break;
    }
  }
  return d == PositionDistribution::first_heavy ? pos : sentences - 1 - pos;
}

void check_rate(double r, const char* name) {
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}

}  // namespace

std::string to_string(PositionDistribution p) {
  switch (p) {
    case PositionDistribution::first_heavy: return "first-heavy";
    case PositionDistribution::uniform: return "uniform";
    case PositionDistribution::tail_heavy: return "tail-heavy";
  }
  return "?";
}

PositionDistribution parse_position_distribution(const std::string& s) {
  if (s == "first-heavy") return PositionDistribution::first_heavy;
  if (s == "uniform") return PositionDistribution::uniform;
  if (s == "tail-heavy") return PositionDistribution::tail_heavy;
  throw std::invalid_argument("unknown position distribution '" + s + "' (first-heavy, uniform, tail-heavy)");
}

void GeneratorConfig::validate() const {
  if (examples < 0) throw std::invalid_argument("example count must be >= 0");
  if (min_sentences < 1 || max_sentences < min_sentences) {
    throw std::invalid_argument("sentence range must satisfy 1 <= min <= max");
  }
  if (filler_min_words < 1 || filler_max_words < filler_min_words) {
    throw std::invalid_argument("filler length range must satisfy 1 <= min <= max");
  }
  check_rate(distractor_rate, "distractor rate");
  check_rate(missing_evidence_rate, "missing-evidence rate");
  check_rate(fact_rate, "fact rate");
  check_rate(other_entity_rate, "other-entity rate");
  if (fact_rate + other_entity_rate > 1.0) throw std::invalid_argument("fact and other-entity rates exceed 1");
  if (distractor_rate > 0 && min_sentences < 2) {
    throw std::invalid_argument("distractors need documents of at least 2 sentences");
  }
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"examples", examples},
          {"min_sentences", min_sentences},
          {"max_sentences", max_sentences},
          {"positions", to_string(positions)},
          {"distractor_rate", distractor_rate},
          {"missing_evidence_rate", missing_evidence_rate},
          {"fact_rate", fact_rate},
          {"other_entity_rate", other_entity_rate},
          {"filler_min_words", filler_min_words},
          {"filler_max_words", filler_max_words},
          {"natural", natural},
          {"seed", seed}};
}

SyntheticExample generate_example(const GeneratorConfig& cfg, std::uint64_t index) {
  Rng rng(splitmix64(cfg.seed ^ splitmix64(index)));
  const auto& props = property_table();
  const Property& prop = props[uniform_below(rng, props.size())];
  const auto vi = uniform_below(rng, prop.values.size());
  const std::string& value = prop.values[vi];
  const std::string entity = entity_name(rng, reserved_words());

  SyntheticExample ex;
  ex.property = prop.name;
  const int L = uniform_int(rng, cfg.min_sentences, cfg.max_sentences);
  ex.evidence = draw_position(cfg.positions, L, rng);
  ex.paraphrased = uniform01(rng) < cfg.missing_evidence_rate;
  if (uniform01(rng) < cfg.distractor_rate) {
    int d = uniform_int(rng, 0, L - 2);
    if (d >= ex.evidence) ++d;
    ex.distractor = d;
  }

  std::vector<std::string> doc;
  doc.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    if (l == ex.evidence) {
      doc.push_back(ex.paraphrased ? paraphrase_sentence(entity, prop.name, prop.codes[vi], rng)
                                   : fact_sentence(entity, prop.name, value, rng));
    } else if (ex.distractor && l == *ex.distractor) {
      doc.push_back(filler_sentence(cfg, rng, &value));
    } else {
      const double u = uniform01(rng);
      if (u < cfg.fact_rate) {
        // Another property of the same entity; its values never collide with the answer.
        const Property* other = &prop;
        while (other == &prop) other = &props[uniform_below(rng, props.size())];
        doc.push_back(fact_sentence(entity, other->name, pick(other->values, rng), rng));
      } else if (u < cfg.fact_rate + cfg.other_entity_rate) {
        std::string other_entity = entity;
        while (other_entity == entity) other_entity = entity_name(rng, reserved_words());
        std::string other_value = value;
        while (other_value == value) other_value = pick(prop.values, rng);
        doc.push_back(fact_sentence(other_entity, prop.name, other_value, rng));
      } else {
        doc.push_back(filler_sentence(cfg, rng, nullptr));
      }
    }
  }
  ex.raw.query = cfg.natural ? "what is the " + prop.name + " of " + entity + " ?" : prop.name + " of " + entity;
  ex.raw.document = std::move(doc);
  ex.raw.answer = value;
  return ex;
}

std::vector<SyntheticExample> generate_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<SyntheticExample> out;
  out.reserve(static_cast<std::size_t>(cfg.examples));
  for (int i = 0; i < cfg.examples; ++i) out.push_back(generate_example(cfg, static_cast<std::uint64_t>(i)));
  return out;
}

CorpusSplits split_corpus(std::vector<SyntheticExample> corpus) {
  const std::size_t n = corpus.size();
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_dev = n / 10;
  CorpusSplits s;
  auto begin = std::make_move_iterator(corpus.begin());
  s.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  s.dev.assign(begin + static_cast<std::ptrdiff_t>(n_train), begin + static_cast<std::ptrdiff_t>(n_train + n_dev));
  s.test.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_dev), std::make_move_iterator(corpus.end()));
  return s;
}

std::string synthetic_to_json_line(const SyntheticExample& ex) {
  nlohmann::json j = nlohmann::json::parse(example_to_json_line(ex.raw));
  j["meta"] = {{"property", ex.property},
               {"evidence", ex.evidence},
               {"distractor", ex.distractor ? nlohmann::json(*ex.distractor) : nlohmann::json(nullptr)},
               {"paraphrased", ex.paraphrased}};
  return j.dump();
}

std::vector<RawExample> raw_examples(const std::vector<SyntheticExample>& corpus) {
  std::vector<RawExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) out.push_back(ex.raw);
  return out;
}

std::vector<RawExample> benchmark_documents(int count, std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.examples = count;
  cfg.min_sentences = cfg.max_sentences = 35;
  cfg.filler_min_words = 10;
  cfg.filler_max_words = 14;
  cfg.fact_rate = 0;
  cfg.other_entity_rate = 0;
  cfg.seed = seed;
  return raw_examples(generate_corpus(cfg));
}

const std::vector<std::string>& synthetic_properties() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& p : property_table()) v.push_back(p.name);
    return v;
  }();
  return names;
}

const std::vector<std::string>& synthetic_values(const std::string& property) {
  for (const auto& p : property_table()) {
    if (p.name == property) return p.values;
  }
  throw std::invalid_argument("unknown property '" + property + "'");
}

}  // namespace c2f
