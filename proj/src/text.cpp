#include "c2f/text.hpp"

#include "c2f/util.hpp"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace c2f {

namespace {

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }
bool is_space(unsigned char c) { return c < 128 && std::isspace(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string word;
    word.reserve(j - i);
    for (std::size_t k = i; k < j; ++k) {
      auto c = static_cast<unsigned char>(text[k]);
      word.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
    std::size_t lead = 0;
    while (lead < word.size() && is_ascii_punct(static_cast<unsigned char>(word[lead]))) ++lead;
    std::size_t trail = word.size();
    while (trail > lead && is_ascii_punct(static_cast<unsigned char>(word[trail - 1]))) --trail;
    for (std::size_t k = 0; k < lead; ++k) out.emplace_back(1, word[k]);
    if (trail > lead) out.push_back(word.substr(lead, trail - lead));
    for (std::size_t k = std::max(trail, lead); k < word.size(); ++k) out.emplace_back(1, word[k]);
    i = j;
  }
  return out;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (cur.empty() && is_space(static_cast<unsigned char>(c))) continue;
    cur.push_back(c);
    const bool terminal = c == '.' || c == '!' || c == '?';
    if (terminal && i + 1 < text.size() && is_space(static_cast<unsigned char>(text[i + 1]))) {
      out.push_back(cur);
      cur.clear();
    }
  }
  while (!cur.empty() && is_space(static_cast<unsigned char>(cur.back()))) cur.pop_back();
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words, int placeholders)
    : words_(std::move(words)), placeholders_(placeholders) {
  if (placeholders_ < 0) throw std::invalid_argument("placeholder count must be non-negative");
  const int base = kFirstPlaceholder + placeholders_;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], base + static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + words_[i]);
    }
  }
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::token(int id) const {
  switch (id) {
    case kPad: return "<pad>";
    case kUnk: return "<unk>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    default: break;
  }
  if (is_placeholder(id)) return "PH_" + std::to_string(id - kFirstPlaceholder);
  const int w = id - kFirstPlaceholder - placeholders_;
  if (w < 0 || w >= static_cast<int>(words_.size())) throw std::out_of_range("token id out of range");
  return words_[static_cast<std::size_t>(w)];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(std::to_string(placeholders_));
  for (const auto& w : words_) {
    h = fnv1a(w, h);
    h = fnv1a(std::string_view("\n", 1), h);
  }
  return h;
}

Vocabulary build_vocab(std::span<const RawExample> corpus, int max_vocab, int placeholders, int min_count) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (placeholders < 0 || max_vocab <= kFirstPlaceholder + placeholders) {
    throw std::invalid_argument("build_vocab: max-vocab must exceed 4 + placeholder count");
  }
  std::unordered_map<std::string, long> counts;
  auto count = [&](std::string_view s) {
    for (auto& t : tokenize(s)) ++counts[t];
  };
  for (const auto& ex : corpus) {
    count(ex.query);
    for (const auto& s : ex.document) count(s);
    count(ex.answer);
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const auto capacity = static_cast<std::size_t>(max_vocab - kFirstPlaceholder - placeholders);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ranked.size() && i < capacity && ranked[i].second >= min_count; ++i) {
    words.push_back(ranked[i].first);
  }
  return Vocabulary(std::move(words), placeholders);
}

// ---------------------------------------------------------------------------

namespace {

/// Assigns placeholder ids to out-of-vocabulary document tokens in order of
/// first occurrence, wrapping modulo the placeholder count.
class PlaceholderAssigner {
 public:
  explicit PlaceholderAssigner(const Vocabulary& vocab) : vocab_(vocab) {}

  int document_id(const std::string& tok) {
    if (auto id = vocab_.find(tok)) return *id;
    auto it = seen_.find(tok);
    if (it != seen_.end()) return it->second;
    if (vocab_.placeholder_count() == 0) return kUnk;
    const int ph = vocab_.placeholder_id(next_ % vocab_.placeholder_count());
    ++next_;
    seen_.emplace(tok, ph);
    map_.emplace(ph, tok);  // first surface form wins on wrap-around
    return ph;
  }

  int other_id(const std::string& tok) const {
    if (auto id = vocab_.find(tok)) return *id;
    auto it = seen_.find(tok);
    return it != seen_.end() ? it->second : kUnk;
  }

  PlaceholderMap take_map() { return std::move(map_); }

 private:
  const Vocabulary& vocab_;
  std::unordered_map<std::string, int> seen_;
  PlaceholderMap map_;
  int next_ = 0;
};

void require_raw(const RawExample& raw) {
  if (tokenize(raw.query).empty()) throw DataError("example has an empty query");
  if (tokenize(raw.answer).empty()) throw DataError("example has an empty answer");
  if (raw.document.empty()) throw DataError("example has an empty document");
}

std::vector<std::vector<std::string>> tokenized_sentences(const RawExample& raw) {
  std::vector<std::vector<std::string>> sents;
  for (const auto& s : raw.document) {
    auto toks = tokenize(s);
    if (!toks.empty()) sents.push_back(std::move(toks));
  }
  if (sents.empty()) throw DataError("document has no non-empty sentences");
  return sents;
}

bool contains_run(std::span<const int> row, std::span<const int> needle, std::size_t at) {
  if (at + needle.size() > row.size()) return false;
  return std::equal(needle.begin(), needle.end(), row.begin() + static_cast<std::ptrdiff_t>(at));
}

int count_runs(std::span<const int> row, std::span<const int> needle) {
  if (needle.empty() || needle.size() > row.size()) return 0;
  int n = 0;
  for (std::size_t i = 0; i + needle.size() <= row.size(); ++i) n += contains_run(row, needle, i) ? 1 : 0;
  return n;
}

}  // namespace

double oov_rate(std::span<const RawExample> corpus, const Vocabulary& vocab) {
  long total = 0, missing = 0;
  auto count = [&](std::string_view text) {
    for (const auto& t : tokenize(text)) {
      ++total;
      missing += vocab.find(t) ? 0 : 1;
    }
  };
  for (const auto& r : corpus) {
    count(r.query);
    for (const auto& s : r.document) count(s);
    count(r.answer);
  }
  return total == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(total);
}

PreparedExample prepare_example(const RawExample& raw, const Vocabulary& vocab, const PrepareConfig& cfg) {
  if (cfg.max_sentences < 1 || cfg.max_tokens < 1) throw std::invalid_argument("limits must be positive");
  require_raw(raw);
  auto sents = tokenized_sentences(raw);

  std::vector<std::string> title;
  if (cfg.title_append) {
    for (const auto& s : sents) {
      for (const auto& t : s) {
        if (static_cast<int>(title.size()) < cfg.title_tokens) title.push_back(t);
      }
    }
  }

  const auto kept = std::min<std::size_t>(sents.size(), static_cast<std::size_t>(cfg.max_sentences));
  const auto M = static_cast<std::size_t>(cfg.max_tokens);
  PlaceholderAssigner assign(vocab);
  PreparedExample ex;
  for (std::size_t l = 0; l < kept; ++l) {
    std::vector<int> row;
    row.reserve(M);
    const std::size_t body = title.size() >= M ? 0 : M - title.size();
    for (std::size_t k = 0; k < sents[l].size() && k < body; ++k) row.push_back(assign.document_id(sents[l][k]));
    for (const auto& t : title) {
      if (row.size() < M) row.push_back(assign.document_id(t));
    }
    ex.lengths.push_back(static_cast<int>(row.size()));
    row.resize(M, kPad);
    ex.rows.push_back(std::move(row));
  }
  for (const auto& t : tokenize(raw.query)) ex.query.push_back(assign.other_id(t));
  for (const auto& t : tokenize(raw.answer)) ex.answer.push_back(assign.other_id(t));
  ex.answer.push_back(kEos);
  ex.placeholders = assign.take_map();
  ex.answer_text = normalize_answer(raw.answer);
  ex.gold = label_gold_sentence(ex, ex.answer_tokens());
  return ex;
}

FlatExample prepare_flat(const RawExample& raw, const Vocabulary& vocab, int budget) {
  if (budget < 1) throw std::invalid_argument("token budget must be positive");
  require_raw(raw);
  auto sents = tokenized_sentences(raw);
  PlaceholderAssigner assign(vocab);
  FlatExample ex;
  for (const auto& s : sents) {
    for (const auto& t : s) {
      ++ex.available_tokens;
      if (static_cast<int>(ex.document.size()) < budget) ex.document.push_back(assign.document_id(t));
    }
  }
  for (const auto& t : tokenize(raw.query)) ex.query.push_back(assign.other_id(t));
  for (const auto& t : tokenize(raw.answer)) ex.answer.push_back(assign.other_id(t));
  ex.answer.push_back(kEos);
  ex.placeholders = assign.take_map();
  ex.answer_text = normalize_answer(raw.answer);
  return ex;
}

int label_gold_sentence(const PreparedExample& ex, std::span<const int> answer) {
  if (answer.empty()) return 0;
  for (int l = 0; l < ex.sentence_count(); ++l) {
    if (count_runs(ex.tokens(l), answer) > 0) return l;
  }
  return 0;
}

std::vector<int> matching_sentences(const PreparedExample& ex) {
  std::vector<int> out;
  for (int l = 0; l < ex.sentence_count(); ++l) {
    if (count_runs(ex.tokens(l), ex.answer_tokens()) > 0) out.push_back(l);
  }
  return out;
}

int count_answer_matches(const PreparedExample& ex) {
  int n = 0;
  for (int l = 0; l < ex.sentence_count(); ++l) n += count_runs(ex.tokens(l), ex.answer_tokens());
  return n;
}

std::string render_answer(std::span<const int> ids, const Vocabulary& vocab, const PlaceholderMap& placeholders) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    std::string tok;
    if (vocab.is_placeholder(id)) {
      auto it = placeholders.find(id);
      tok = it != placeholders.end() ? it->second : vocab.token(id);
    } else {
      tok = vocab.token(id);
    }
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

// ---------------------------------------------------------------------------

RawExample parse_example_line(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DataError(where + "expected a JSON object");
  for (const char* field : {"query", "document", "answer"}) {
    if (!j.contains(field)) throw DataError(where + "missing field '" + field + "'");
  }
  RawExample ex;
  if (!j["query"].is_string()) throw DataError(where + "field 'query' must be a string");
  if (!j["answer"].is_string()) throw DataError(where + "field 'answer' must be a string");
  ex.query = j["query"].get<std::string>();
  ex.answer = j["answer"].get<std::string>();
  const auto& doc = j["document"];
  if (doc.is_string()) {
    ex.document = split_sentences(doc.get<std::string>());
  } else if (doc.is_array()) {
    for (const auto& s : doc) {
      if (!s.is_string()) throw DataError(where + "field 'document' must hold strings");
      ex.document.push_back(s.get<std::string>());
    }
  } else {
    throw DataError(where + "field 'document' must be a string or an array of strings");
  }
  return ex;
}

std::string example_to_json_line(const RawExample& ex) {
  nlohmann::json j;
  j["query"] = ex.query;
  j["document"] = ex.document;
  j["answer"] = ex.answer;
  return j.dump();
}

std::vector<RawExample> read_jsonl(std::istream& in) {
  std::vector<RawExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_example_line(line, n));
  }
  return out;
}

std::vector<RawExample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_jsonl(in);
}

void write_jsonl(std::span<const RawExample> examples, std::ostream& out) {
  for (const auto& ex : examples) out << example_to_json_line(ex) << '\n';
}

void write_jsonl(std::span<const RawExample> examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_jsonl(examples, out);
}

}  // namespace c2f
