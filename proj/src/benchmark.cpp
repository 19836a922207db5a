#include "c2f/benchmark.hpp"

#include "c2f/answer.hpp"
#include "c2f/evaluation.hpp"
#include "c2f/selection.hpp"
#include "c2f/summary.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace c2f {

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point a, Clock::time_point b) { return std::chrono::duration<double>(b - a).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct RunTimes {
  double encode = 0;
  double selection = 0;
  double total = 0;
};

std::vector<int> summary_ids(Bound& b, const PreparedExample& ex, const RunConfig& cfg, int k) {
  const SelectionDistribution dist = score_sentences(b, ex);
  const HardSummary s = hard_select(dist.values(), ex, k, SelectMode::argmax);
  return hard_encoder_ids(ex.query, s.tokens, cfg.process_pads);
}

RunTimes run_once(Model& model, std::span<const PreparedExample> docs, std::span<const FlatExample> flat_docs,
                  const Vocabulary& vocab, const RunConfig& cfg, const EncodingSetup& setup, std::size_t batch) {
  RunTimes t;
  const std::size_t n = setup.flat ? flat_docs.size() : docs.size();
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    Tape tape(Tape::Mode::inference);
    Bound b(tape, model);
    const auto t0 = Clock::now();
    std::vector<std::vector<int>> seqs;
    seqs.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      if (setup.flat) {
        seqs.push_back(flat_encoder_ids(flat_docs[i].query, flat_docs[i].document));
      } else {
        seqs.push_back(summary_ids(b, docs[i], cfg, setup.k));
      }
    }
    const auto t1 = Clock::now();
    Var h = encode_batch(b, seqs);
    const auto t2 = Clock::now();
    for (std::size_t i = start; i < end; ++i) {
      const auto& ph = setup.flat ? flat_docs[i].placeholders : docs[i].placeholders;
      decode_greedy(b, ad::col(h, static_cast<Eigen::Index>(i - start)), cfg.max_answer_len, vocab, ph);
    }
    const auto t3 = Clock::now();
    t.selection += seconds(t0, t1);
    t.encode += seconds(t0, t2);
    t.total += seconds(t0, t3);
  }
  return t;
}

}  // namespace

double timer_resolution() {
  double best = 1.0;
  for (int i = 0; i < 64; ++i) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, seconds(a, b));
  }
  return best;
}

std::uint64_t count_encoder_steps(Model& model, const PreparedExample& ex, const RunConfig& cfg, int k) {
  Tape tape(Tape::Mode::inference);
  Bound b(tape, model);
  const auto ids = summary_ids(b, ex, cfg, k);
  const std::uint64_t before = ad::gru_step_counter;
  encode_batch(b, {ids});
  return ad::gru_step_counter - before;
}

std::uint64_t count_flat_encoder_steps(Model& model, const FlatExample& ex) {
  Tape tape(Tape::Mode::inference);
  Bound b(tape, model);
  const std::uint64_t before = ad::gru_step_counter;
  encode_batch(b, {flat_encoder_ids(ex.query, ex.document)});
  return ad::gru_step_counter - before;
}

Measurement measure_encoding(Model& model, std::span<const PreparedExample> docs,
                             std::span<const FlatExample> flat_docs, const Vocabulary& vocab, const RunConfig& cfg,
                             const EncodingSetup& setup, int batch_size, int repetitions) {
  if (repetitions < 5) throw BenchmarkError("benchmark needs at least 5 repetitions");
  if (batch_size < 1) throw BenchmarkError("batch size must be >= 1");
  const std::size_t n = setup.flat ? flat_docs.size() : docs.size();
  if (n == 0) throw BenchmarkError("benchmark has no documents");
  const double resolution = timer_resolution();
  if (resolution > 1e-6) throw BenchmarkError("steady clock resolution is coarser than one microsecond");

  Measurement m;
  double steps = 0, budget = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (setup.flat) {
      steps += static_cast<double>(count_flat_encoder_steps(model, flat_docs[i]));
      budget += static_cast<double>(flat_docs[i].document.size());
    } else {
      steps += static_cast<double>(count_encoder_steps(model, docs[i], cfg, setup.k));
      budget += static_cast<double>(setup.k * docs[i].max_tokens());
    }
  }
  m.gru_steps = steps / static_cast<double>(n);
  m.token_budget = static_cast<int>(budget / static_cast<double>(n) + 0.5);

  const auto B = static_cast<std::size_t>(batch_size);
  run_once(model, docs, flat_docs, vocab, cfg, setup, B);  // warm-up
  std::vector<double> enc, sel, tot;
  for (int r = 0; r < repetitions; ++r) {
    const RunTimes t = run_once(model, docs, flat_docs, vocab, cfg, setup, B);
    enc.push_back(t.encode);
    sel.push_back(t.selection);
    tot.push_back(t.total);
  }
  m.median_seconds = median(enc);
  m.selection_seconds = setup.flat ? 0.0 : median(sel);
  m.end_to_end_seconds = median(tot);
  if (m.median_seconds < 1000 * resolution) {
    throw BenchmarkError("encoding run of " + std::to_string(m.median_seconds) +
                         " s is too short for the clock; use more documents or repetitions");
  }
  return m;
}

std::vector<BenchRow> benchmark_encoding(Model& model, std::span<const RawExample> docs, const Vocabulary& vocab,
                                         const RunConfig& cfg, const BenchOptions& opts) {
  const auto prepared = prepare_all(docs, vocab, cfg.prepare_config());
  const auto flat = prepare_all_flat(docs, vocab, cfg.base_tokens);
  std::vector<EncodingSetup> setups{{"base", true, 0}};
  for (int k : opts.ks) setups.push_back({"hier-k" + std::to_string(k), false, k});

  std::vector<BenchRow> rows;
  const double n = static_cast<double>(docs.size());
  for (int batch : opts.batch_sizes) {
    double base_rate = 0;
    for (const auto& s : setups) {
      const Measurement m = measure_encoding(model, prepared, flat, vocab, cfg, s, batch, opts.repetitions);
      BenchRow r;
      r.config = s.name;
      r.batch_size = batch;
      r.k = s.k;
      r.token_budget = m.token_budget;
      r.gru_steps = m.gru_steps;
      r.median_seconds = m.median_seconds;
      r.docs_per_sec = n / m.median_seconds;
      if (s.flat) base_rate = r.docs_per_sec;
      r.speedup = r.docs_per_sec / base_rate;
      r.selection_seconds = m.selection_seconds;
      r.end_to_end_docs_per_sec = n / m.end_to_end_seconds;
      rows.push_back(r);
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "config,batch_size,k,token_budget,gru_steps,median_seconds,docs_per_sec,speedup,selection_seconds,"
         "end_to_end_docs_per_sec\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%.6g,%.6g,%.6g,%.4f,%.6g,%.6g\n", r.config.c_str(), r.batch_size, r.k,
                  r.token_budget, r.gru_steps, r.median_seconds, r.docs_per_sec, r.speedup, r.selection_seconds,
                  r.end_to_end_docs_per_sec);
    out << buf;
  }
}

}  // namespace c2f
