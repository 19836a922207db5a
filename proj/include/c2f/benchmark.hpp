// Document-encoding throughput: hierarchical (selection + summary + encoder)
// versus the flat reader over the first budget tokens.
#pragma once

#include "c2f/config.hpp"
#include "c2f/model.hpp"
#include "c2f/text.hpp"

#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace c2f {

class BenchmarkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncodingSetup {
  std::string name;  // "base", "hier-k1", ...
  bool flat = false;
  int k = 1;
};

struct Measurement {
  double median_seconds = 0;      // encoding stage, all documents
  double selection_seconds = 0;   // selection share of the above (median)
  double end_to_end_seconds = 0;  // encoding plus greedy decoding (median)
  double gru_steps = 0;           // encoder GRU steps per document at batch 1
  int token_budget = 0;           // summary or document tokens read by the encoder
};

struct BenchRow {
  std::string config;
  int batch_size = 1;
  int k = 0;
  int token_budget = 0;
  double gru_steps = 0;
  double median_seconds = 0;
  double docs_per_sec = 0;
  double speedup = 0;  // docs_per_sec / base docs_per_sec at the same batch size
  double selection_seconds = 0;
  double end_to_end_docs_per_sec = 0;
};

struct BenchOptions {
  std::vector<int> batch_sizes{1};
  std::vector<int> ks{1, 2};
  int repetitions = 5;
};

/// Times one setup over all documents. Warms up once, then reports medians
/// of `repetitions` runs. Throws BenchmarkError when a run is too short for
/// the clock.
Measurement measure_encoding(Model& model, std::span<const PreparedExample> docs,
                             std::span<const FlatExample> flat_docs, const Vocabulary& vocab, const RunConfig& cfg,
                             const EncodingSetup& setup, int batch_size, int repetitions);

/// Base plus one hierarchical setup per K, for every batch size.
std::vector<BenchRow> benchmark_encoding(Model& model, std::span<const RawExample> docs, const Vocabulary& vocab,
                                         const RunConfig& cfg, const BenchOptions& opts);

/// Encoder GRU steps needed for one example (no timing).
std::uint64_t count_encoder_steps(Model& model, const PreparedExample& ex, const RunConfig& cfg, int k);
std::uint64_t count_flat_encoder_steps(Model& model, const FlatExample& ex);

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

/// Smallest observable steady_clock increment, in seconds.
double timer_resolution();

}  // namespace c2f
