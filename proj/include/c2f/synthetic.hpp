// Synthetic (query, document, answer) corpus. Each document describes one
// entity; a single evidence sentence determines the queried property, and
// knobs control where it sits, whether the answer string is also planted in
// an unrelated sentence, and whether the evidence states the answer only
// indirectly (through a code word).
#pragma once

#include "c2f/text.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace c2f {

enum class PositionDistribution { first_heavy, uniform, tail_heavy };
std::string to_string(PositionDistribution p);
PositionDistribution parse_position_distribution(const std::string& s);

struct GeneratorConfig {
  int examples = 1000;
  int min_sentences = 10;
  int max_sentences = 35;
  PositionDistribution positions = PositionDistribution::uniform;
  double distractor_rate = 0.1;         // answer string also planted in an unrelated sentence
  double missing_evidence_rate = 0.2;   // evidence paraphrased without the answer string
  double fact_rate = 0.3;               // filler is another property of the same entity
  double other_entity_rate = 0.1;       // filler is the same property of another entity
  int filler_min_words = 6;
  int filler_max_words = 10;
  bool natural = false;                 // "what is the color of X ?" instead of "color of X"
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on infeasible settings.
  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticExample {
  RawExample raw;
  std::string property;
  int evidence = 0;                 // index of the evidence sentence
  std::optional<int> distractor;    // index of the planted distractor
  bool paraphrased = false;
};

/// The `index`-th example of a corpus; depends only on (cfg, index).
SyntheticExample generate_example(const GeneratorConfig& cfg, std::uint64_t index);
std::vector<SyntheticExample> generate_corpus(const GeneratorConfig& cfg);

struct CorpusSplits {
  std::vector<SyntheticExample> train, dev, test;
};
/// 70/10/20 split in generation order.
CorpusSplits split_corpus(std::vector<SyntheticExample> corpus);

std::string synthetic_to_json_line(const SyntheticExample& ex);
std::vector<RawExample> raw_examples(const std::vector<SyntheticExample>& corpus);

/// Long documents (35 sentences, at least 300 tokens) for throughput runs.
std::vector<RawExample> benchmark_documents(int count, std::uint64_t seed);

/// Every property name and value the generator can emit.
const std::vector<std::string>& synthetic_properties();
const std::vector<std::string>& synthetic_values(const std::string& property);

}  // namespace c2f
