// Test-time prediction, answer / sentence-selection metrics, baselines and
// dataset statistics.
#pragma once

#include "c2f/answer.hpp"
#include "c2f/config.hpp"
#include "c2f/model.hpp"
#include "c2f/text.hpp"

#include "json.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace c2f {

enum class Baseline { none, first, oracle, base };
std::string to_string(Baseline b);
Baseline parse_eval_baseline(const std::string& s);

/// Number of sentences fed to the generator at test time. Pipeline models
/// are trained on single gold sentences and always read one.
int evaluation_k(const RunConfig& cfg);

struct Prediction {
  int sentence = 0;          // most probable (or forced) sentence
  double probability = 0;    // its selection probability
  std::vector<int> summary;  // sentence indices read by the generator
  AnswerPrediction answer;
  double gold_loglik = 0;    // log p(y* | x, summary)
};

/// Argmax / top-K selection (hard) or blending (soft), then greedy decoding.
/// `forced` replaces the selector's choice by a fixed sentence (K = 1).
Prediction predict(Model& model, const PreparedExample& ex, const Vocabulary& vocab, const RunConfig& cfg,
                   std::optional<int> forced = std::nullopt);
/// Flat reader over the query and the first budget document tokens.
Prediction predict_flat(Model& model, const FlatExample& ex, const Vocabulary& vocab, const RunConfig& cfg);

/// Normalized exact match.
bool answer_matches(std::string_view predicted, std::string_view gold);

struct SentenceScore {
  int restricted = 0;  // examples where some sentence contains the answer
  int hits = 0;        // prediction is any matching sentence
  int first_hits = 0;  // prediction is the first matching sentence

  std::optional<double> accuracy() const;
  std::optional<double> first_accuracy() const;
};

SentenceScore score_sentence_predictions(std::span<const PreparedExample> data, std::span<const int> predicted);

struct EvalReport {
  std::string method;
  bool oracle = false;
  int examples = 0;
  int answer_hits = 0;
  SentenceScore sentences;
  double mean_gold_loglik = 0;
  std::vector<Prediction> predictions;

  double answer_accuracy() const { return examples == 0 ? 0.0 : static_cast<double>(answer_hits) / examples; }
  nlohmann::json to_json() const;
};

/// Scores a hierarchical model, optionally with a First or Oracle selector.
EvalReport evaluate(Model& model, std::span<const PreparedExample> data, const Vocabulary& vocab,
                    const RunConfig& cfg, Baseline kind = Baseline::none);
EvalReport evaluate_flat(Model& model, std::span<const FlatExample> data, const Vocabulary& vocab,
                         const RunConfig& cfg);

/// Prepares `raw` as the baseline requires, then evaluates.
EvalReport run_baseline(Baseline kind, Model& model, std::span<const RawExample> raw, const Vocabulary& vocab,
                        const RunConfig& cfg);

struct DatasetStats {
  int examples = 0;
  double answer_present_pct = 0;  // some kept sentence contains the answer
  double avg_matches = 0;         // answer occurrences, among matched examples
  double first_sentence_pct = 0;  // first match in sentence 0, among matched examples
  double avg_query_tokens = 0;
  double avg_document_tokens = 0;  // before cropping
  double avg_sentences = 0;        // before cropping
  double oov_pct = 0;              // tokens outside the vocabulary

  nlohmann::json to_json() const;
};

DatasetStats dataset_stats(std::span<const RawExample> raw, const Vocabulary& vocab, const PrepareConfig& cfg);

std::vector<PreparedExample> prepare_all(std::span<const RawExample> raw, const Vocabulary& vocab,
                                         const PrepareConfig& cfg);
std::vector<FlatExample> prepare_all_flat(std::span<const RawExample> raw, const Vocabulary& vocab, int budget);

}  // namespace c2f
