#include "c2f/evaluation.hpp"

#include "c2f/selection.hpp"
#include "c2f/summary.hpp"

#include <algorithm>
#include <stdexcept>

namespace c2f {

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::none: return "none";
    case Baseline::first: return "first";
    case Baseline::oracle: return "oracle";
    case Baseline::base: return "base";
  }
  return "?";
}

Baseline parse_eval_baseline(const std::string& s) {
  if (s == "none") return Baseline::none;
  if (s == "first") return Baseline::first;
  if (s == "oracle") return Baseline::oracle;
  if (s == "base") return Baseline::base;
  throw ConfigError("unknown baseline '" + s + "' (expected none, first, oracle or base)");
}

int evaluation_k(const RunConfig& cfg) { return cfg.method == Method::pipeline ? 1 : cfg.k; }

Prediction predict(Model& model, const PreparedExample& ex, const Vocabulary& vocab, const RunConfig& cfg,
                   std::optional<int> forced) {
  Tape tape(Tape::Mode::inference);
  Bound b(tape, model);
  Prediction p;
  Var state;
  if (forced) {
    if (*forced < 0 || *forced >= ex.sentence_count()) throw std::out_of_range("forced sentence out of range");
    p.sentence = *forced;
    p.probability = 1.0;
    p.summary = {*forced};
    const HardSummary s = assemble_hard_summary(ex, {*forced});
    state = encode_hard(b, ex.query, s.tokens, cfg.process_pads);
  } else {
    const SelectionDistribution dist = score_sentences(b, ex);
    const std::vector<double> probs = dist.values();
    p.sentence = top_k(probs, 1).front();
    p.probability = probs[static_cast<std::size_t>(p.sentence)];
    if (cfg.summary == SummaryMode::soft) {
      state = encode_soft(b, ex.query, soft_blend(dist.probs, ex, b.embedding));
    } else {
      const HardSummary s = hard_select(probs, ex, evaluation_k(cfg), SelectMode::argmax, nullptr, cfg.rank_order);
      p.summary = s.indices;
      state = encode_hard(b, ex.query, s.tokens, cfg.process_pads);
    }
  }
  p.gold_loglik = decode_loglik(b, state, ex.answer).scalar();
  p.answer = decode_greedy(b, state, cfg.max_answer_len, vocab, ex.placeholders);
  return p;
}

Prediction predict_flat(Model& model, const FlatExample& ex, const Vocabulary& vocab, const RunConfig& cfg) {
  Tape tape(Tape::Mode::inference);
  Bound b(tape, model);
  Prediction p;
  Var state = encode_flat(b, ex.query, ex.document);
  p.gold_loglik = decode_loglik(b, state, ex.answer).scalar();
  p.answer = decode_greedy(b, state, cfg.max_answer_len, vocab, ex.placeholders);
  return p;
}

bool answer_matches(std::string_view predicted, std::string_view gold) {
  return normalize_answer(predicted) == normalize_answer(gold);
}

std::optional<double> SentenceScore::accuracy() const {
  if (restricted == 0) return std::nullopt;
  return static_cast<double>(hits) / restricted;
}

std::optional<double> SentenceScore::first_accuracy() const {
  if (restricted == 0) return std::nullopt;
  return static_cast<double>(first_hits) / restricted;
}

SentenceScore score_sentence_predictions(std::span<const PreparedExample> data, std::span<const int> predicted) {
  if (data.size() != predicted.size()) throw std::invalid_argument("sentence scoring: size mismatch");
  SentenceScore s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto matches = matching_sentences(data[i]);
    if (matches.empty()) continue;
    ++s.restricted;
    if (std::find(matches.begin(), matches.end(), predicted[i]) != matches.end()) ++s.hits;
    if (matches.front() == predicted[i]) ++s.first_hits;
  }
  return s;
}

namespace {

nlohmann::json optional_json(std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"method", method},
          {"oracle", oracle},
          {"examples", examples},
          {"answer_correct", answer_hits},
          {"answer_accuracy", answer_accuracy()},
          {"sentence_restricted", sentences.restricted},
          {"sentence_hits", sentences.hits},
          {"sentence_accuracy", optional_json(sentences.accuracy())},
          {"sentence_first_hits", sentences.first_hits},
          {"sentence_first_accuracy", optional_json(sentences.first_accuracy())},
          {"mean_gold_loglik", mean_gold_loglik}};
}

EvalReport evaluate(Model& model, std::span<const PreparedExample> data, const Vocabulary& vocab,
                    const RunConfig& cfg, Baseline kind) {
  if (kind == Baseline::base) throw std::invalid_argument("evaluate: the base reader needs flat examples");
  EvalReport r;
  r.method = kind == Baseline::none ? to_string(cfg.method) : to_string(kind);
  r.oracle = kind == Baseline::oracle;
  std::vector<int> chosen;
  double ll = 0;
  for (const auto& ex : data) {
    std::optional<int> forced;
    if (kind == Baseline::first) forced = 0;
    if (kind == Baseline::oracle) forced = label_gold_sentence(ex, ex.answer_tokens());
    Prediction p = predict(model, ex, vocab, cfg, forced);
    ++r.examples;
    if (answer_matches(p.answer.surface, ex.answer_text)) ++r.answer_hits;
    chosen.push_back(p.sentence);
    ll += p.gold_loglik;
    r.predictions.push_back(std::move(p));
  }
  r.sentences = score_sentence_predictions(data, chosen);
  r.mean_gold_loglik = r.examples == 0 ? 0.0 : ll / r.examples;
  return r;
}

EvalReport evaluate_flat(Model& model, std::span<const FlatExample> data, const Vocabulary& vocab,
                         const RunConfig& cfg) {
  EvalReport r;
  r.method = "base";
  double ll = 0;
  for (const auto& ex : data) {
    Prediction p = predict_flat(model, ex, vocab, cfg);
    ++r.examples;
    if (answer_matches(p.answer.surface, ex.answer_text)) ++r.answer_hits;
    ll += p.gold_loglik;
    r.predictions.push_back(std::move(p));
  }
  r.mean_gold_loglik = r.examples == 0 ? 0.0 : ll / r.examples;
  return r;
}

EvalReport run_baseline(Baseline kind, Model& model, std::span<const RawExample> raw, const Vocabulary& vocab,
                        const RunConfig& cfg) {
  if (kind == Baseline::base) {
    const auto flat = prepare_all_flat(raw, vocab, cfg.base_tokens);
    return evaluate_flat(model, flat, vocab, cfg);
  }
  const auto data = prepare_all(raw, vocab, cfg.prepare_config());
  return evaluate(model, data, vocab, cfg, kind);
}

nlohmann::json DatasetStats::to_json() const {
  return {{"examples", examples},
          {"answer_present_pct", answer_present_pct},
          {"avg_matches", avg_matches},
          {"first_sentence_pct", first_sentence_pct},
          {"avg_query_tokens", avg_query_tokens},
          {"avg_document_tokens", avg_document_tokens},
          {"avg_sentences", avg_sentences},
          {"oov_pct", oov_pct}};
}

DatasetStats dataset_stats(std::span<const RawExample> raw, const Vocabulary& vocab, const PrepareConfig& cfg) {
  DatasetStats s;
  long matched = 0, matches = 0, first = 0, qtok = 0, dtok = 0, sents = 0;
  for (const auto& r : raw) {
    const PreparedExample ex = prepare_example(r, vocab, cfg);
    ++s.examples;
    qtok += static_cast<long>(ex.query.size());
    for (const auto& sentence : r.document) {
      const auto n = tokenize(sentence).size();
      dtok += static_cast<long>(n);
      sents += n > 0 ? 1 : 0;
    }
    const auto m = matching_sentences(ex);
    if (m.empty()) continue;
    ++matched;
    matches += count_answer_matches(ex);
    first += m.front() == 0 ? 1 : 0;
  }
  if (s.examples == 0) return s;
  const double n = s.examples;
  s.answer_present_pct = 100.0 * static_cast<double>(matched) / n;
  s.avg_matches = matched == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(matched);
  s.first_sentence_pct = matched == 0 ? 0.0 : 100.0 * static_cast<double>(first) / static_cast<double>(matched);
  s.avg_query_tokens = static_cast<double>(qtok) / n;
  s.avg_document_tokens = static_cast<double>(dtok) / n;
  s.avg_sentences = static_cast<double>(sents) / n;
  s.oov_pct = 100.0 * oov_rate(raw, vocab);
  return s;
}

std::vector<PreparedExample> prepare_all(std::span<const RawExample> raw, const Vocabulary& vocab,
                                         const PrepareConfig& cfg) {
  std::vector<PreparedExample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(prepare_example(r, vocab, cfg));
  return out;
}

std::vector<FlatExample> prepare_all_flat(std::span<const RawExample> raw, const Vocabulary& vocab, int budget) {
  std::vector<FlatExample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(prepare_flat(r, vocab, budget));
  return out;
}

}  // namespace c2f
