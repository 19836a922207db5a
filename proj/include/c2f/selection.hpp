// Coarse sentence scorers defining p(s | x, d).
#pragma once

#include "c2f/model.hpp"
#include "c2f/text.hpp"

#include <optional>
#include <span>
#include <vector>

namespace c2f {

struct SelectionDistribution {
  Var probs;      // 1 x L
  Var log_probs;  // 1 x L
  std::optional<Var> chunk_probs;   // 1 x (number of chunks), chunked scorer only
  std::vector<int> chunk_sentence;  // parent sentence of every chunk

  int size() const { return static_cast<int>(probs.cols()); }
  std::vector<double> values() const;
};

struct ChunkOptions {
  int chunk_size = 7;
  bool fixed_j = false;  // split the padded row into ceil(M / chunk_size) chunks
};

/// Mean embedding of the non-pad ids; throws ShapeError when none remain.
Var bow_repr(Var table, std::span<const int> ids);

/// onehot x L matrix whose column l is the indicator of sentence l.
Mat sentence_index_onehots(int sentences, int dim);

SelectionDistribution score_bow(Bound& b, const PreparedExample& ex);
SelectionDistribution score_chunked(Bound& b, const PreparedExample& ex, const ChunkOptions& opts);
SelectionDistribution score_cnn(Bound& b, const PreparedExample& ex);

/// Dispatches on the model's selector kind.
SelectionDistribution score_sentences(Bound& b, const PreparedExample& ex);

}  // namespace c2f
