// Tokenization, vocabulary, placeholder substitution, document cropping,
// distant-supervision labels and JSONL dataset I/O.
#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace c2f {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kFirstPlaceholder = 4;

/// Lowercases, splits on whitespace and peels leading/trailing ASCII
/// punctuation into single-character tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Tokenized form re-joined with single spaces; used for answer comparison.
std::string normalize_answer(std::string_view text);

/// Splits after '.', '!' or '?' when followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

struct RawExample {
  std::string query;
  std::vector<std::string> document;
  std::string answer;

  bool operator==(const RawExample&) const = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  /// `words` are the non-special tokens in id order.
  Vocabulary(std::vector<std::string> words, int placeholders);

  int size() const { return kFirstPlaceholder + placeholders_ + static_cast<int>(words_.size()); }
  int placeholder_count() const { return placeholders_; }
  int placeholder_id(int i) const { return kFirstPlaceholder + i; }
  bool is_placeholder(int id) const { return id >= kFirstPlaceholder && id < kFirstPlaceholder + placeholders_; }
  bool is_special(int id) const { return id < kFirstPlaceholder + placeholders_; }

  /// Id of a non-special token, if present.
  std::optional<int> find(std::string_view token) const;
  /// Surface form of an id; specials render as markers ("<pad>", "PH_3").
  std::string token(int id) const;

  const std::vector<std::string>& words() const { return words_; }
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  int placeholders_ = 0;
  std::unordered_map<std::string, int> index_;
};

/// Most frequent tokens over queries, documents and answers, ties broken
/// lexicographically, after reserving 4 specials and `placeholders` ids.
/// Tokens seen fewer than `min_count` times are left out.
Vocabulary build_vocab(std::span<const RawExample> corpus, int max_vocab, int placeholders, int min_count = 1);

/// Share of query, document and answer tokens missing from `vocab`.
double oov_rate(std::span<const RawExample> corpus, const Vocabulary& vocab);

struct PrepareConfig {
  int max_sentences = 35;
  int max_tokens = 35;
  bool title_append = false;
  int title_tokens = 5;
};

using PlaceholderMap = std::map<int, std::string>;

struct PreparedExample {
  std::vector<int> query;
  std::vector<std::vector<int>> rows;  // L rows of exactly max_tokens ids, pads at the tail
  std::vector<int> lengths;            // non-pad count per row
  std::vector<int> answer;             // ends with kEos
  PlaceholderMap placeholders;
  std::optional<int> gold;
  std::string answer_text;  // normalized gold answer

  int sentence_count() const { return static_cast<int>(rows.size()); }
  int max_tokens() const { return rows.empty() ? 0 : static_cast<int>(rows.front().size()); }
  std::span<const int> tokens(int l) const {
    return {rows[static_cast<std::size_t>(l)].data(), static_cast<std::size_t>(lengths[static_cast<std::size_t>(l)])};
  }
  /// Answer ids without the trailing EOS.
  std::span<const int> answer_tokens() const { return {answer.data(), answer.size() - 1}; }
};

/// Query + the first `budget` document tokens, used by the flat reader.
struct FlatExample {
  std::vector<int> query;
  std::vector<int> document;
  std::vector<int> answer;
  PlaceholderMap placeholders;
  std::string answer_text;
  int available_tokens = 0;  // document length before cropping
};

PreparedExample prepare_example(const RawExample& raw, const Vocabulary& vocab, const PrepareConfig& cfg);
FlatExample prepare_flat(const RawExample& raw, const Vocabulary& vocab, int budget);

/// First row containing `answer` as a contiguous run of non-pad ids, else 0.
int label_gold_sentence(const PreparedExample& ex, std::span<const int> answer);
/// Every row containing the answer.
std::vector<int> matching_sentences(const PreparedExample& ex);
/// Occurrences of the answer across all rows.
int count_answer_matches(const PreparedExample& ex);

/// Renders ids up to EOS, restoring placeholder surface forms.
std::string render_answer(std::span<const int> ids, const Vocabulary& vocab, const PlaceholderMap& placeholders);

// JSONL: {"query": str, "document": [str] | str, "answer": str}; other keys
// are ignored on read.
std::vector<RawExample> read_jsonl(std::istream& in);
std::vector<RawExample> read_jsonl(const std::string& path);
void write_jsonl(std::span<const RawExample> examples, std::ostream& out);
void write_jsonl(std::span<const RawExample> examples, const std::string& path);
RawExample parse_example_line(std::string_view line, std::size_t line_number);
std::string example_to_json_line(const RawExample& ex);

}  // namespace c2f
