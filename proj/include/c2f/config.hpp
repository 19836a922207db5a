#pragma once

#include "c2f/text.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace c2f {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class SelectorKind { bow, chunk, cnn };
enum class SummaryMode { hard, soft };
enum class Method { pipeline, reinforce, soft, base };
enum class RewardBaseline { none, mean };

std::string to_string(SelectorKind k);
std::string to_string(SummaryMode m);
std::string to_string(Method m);
std::string to_string(RewardBaseline b);
SelectorKind parse_selector_kind(const std::string& s);
SummaryMode parse_summary_mode(const std::string& s);
Method parse_method(const std::string& s);
RewardBaseline parse_baseline(const std::string& s);

/// Every tunable of a run, addressed by dotted keys ("model.hidden").
struct RunConfig {
  // limits.*
  int sentences = 35;
  int tokens = 35;
  bool title_append = false;
  // vocab.*
  int vocab_size = 2000;
  int placeholders = 100;
  int min_count = 1;
  // selector.*
  SelectorKind selector = SelectorKind::bow;
  int selector_hidden = 128;
  int chunk_size = 7;
  bool chunk_fixed_j = false;
  int filters = 64;
  int width = 5;
  // summary.*
  SummaryMode summary = SummaryMode::hard;
  int k = 1;
  bool rank_order = false;  // test-time top-K concatenated most probable first
  // model.*
  int hidden = 128;
  int embed = 64;
  int max_answer_len = 10;
  double init_scale = 0.08;
  // encoder.*
  bool process_pads = true;
  // base.*
  int base_tokens = 300;
  // train.*
  Method method = Method::reinforce;
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double clip_norm = 5.0;
  double decay = 0.5;
  std::uint64_t seed = 1;
  bool eval_train = false;
  // reinforce.*
  RewardBaseline baseline = RewardBaseline::none;
  // bench.*
  int repetitions = 5;

  /// Sets one key from a JSON value; unknown keys and bad types throw.
  void set(const std::string& key, const nlohmann::json& value);
  /// Sets one key from its textual form ("64", "true", "bow").
  void set_string(const std::string& key, const std::string& value);
  /// Applies a JSON object; nested objects map to dotted keys.
  void merge(const nlohmann::json& obj);
  /// Applies C2F_<SECTION>_<NAME> variables from the process environment.
  void merge_environment();
  /// Reads a JSON object or key=value lines.
  void merge_file(const std::string& path);

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  nlohmann::json to_json() const;  // flat {dotted key: value}
  std::uint64_t hash() const;
  std::string hash_hex() const;

  PrepareConfig prepare_config() const { return {sentences, tokens, title_append, 5}; }

  static const std::vector<std::string>& keys();
  static std::string env_name(const std::string& key);
};

std::string hex64(std::uint64_t v);

}  // namespace c2f
