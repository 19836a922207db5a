// GRU encoder-decoder over (query, summary) producing p(y | x, summary).
#pragma once

#include "c2f/model.hpp"
#include "c2f/text.hpp"

#include <span>
#include <string>
#include <vector>

namespace c2f {

/// Token separating the query from the summary in the encoder input.
inline constexpr int kSeparator = kEos;

struct AnswerPrediction {
  std::vector<int> ids;  // decoded ids, ending at EOS when it was produced
  std::string surface;   // placeholders restored, tokens joined by spaces
  double log_prob = 0;   // log p(ids | state)
};

/// Encoder id sequence for a hard summary: query, separator, summary tokens
/// (pads dropped unless `process_pads`).
std::vector<int> hard_encoder_ids(std::span<const int> query, std::span<const int> summary, bool process_pads);
/// Encoder id sequence for the flat reader: query followed by document tokens.
std::vector<int> flat_encoder_ids(std::span<const int> query, std::span<const int> document);

/// Runs the encoder GRU from a zero state over the columns of `inputs` (e x T).
Var encode_inputs(Bound& b, Var inputs);

Var encode_hard(Bound& b, std::span<const int> query, std::span<const int> summary, bool process_pads);
Var encode_soft(Bound& b, std::span<const int> query, Var blended);
Var encode_flat(Bound& b, std::span<const int> query, std::span<const int> document);

/// Encodes several id sequences at once (H x B). Shorter sequences are
/// left-padded with PAD so that all finish on the same step.
Var encode_batch(Bound& b, const std::vector<std::vector<int>>& sequences);

/// V x T logits E (P h_t) + b for decoder states stacked as columns.
Var output_logits(Bound& b, Var states);

/// Teacher-forced log p(target | state); `target` must end with EOS.
Var decode_loglik(Bound& b, Var state, std::span<const int> target);

AnswerPrediction decode_greedy(Bound& b, Var state, int max_len, const Vocabulary& vocab,
                               const PlaceholderMap& placeholders);

}  // namespace c2f
