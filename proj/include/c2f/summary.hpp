// Document summaries: sampled/argmax sentences (hard) or probability-blended
// token embeddings (soft).
#pragma once

#include "c2f/model.hpp"
#include "c2f/text.hpp"
#include "c2f/util.hpp"

#include <span>
#include <vector>

namespace c2f {

enum class SelectMode { sample, argmax };

struct HardSummary {
  std::vector<int> indices;  // distinct; draw order (sample), index or rank order (argmax)
  std::vector<int> tokens;   // selected rows without pads, concatenated, re-padded to |indices| * M
  bool clipped = false;      // K exceeded the number of sentences
};

/// K draws without replacement: draw, remove, renormalize, repeat.
std::vector<int> sample_without_replacement(std::span<const double> probs, int k, Rng& rng);

/// The K most probable indices (ties to the lower index), returned in index
/// order, or most probable first when `rank_order` is set.
std::vector<int> top_k(std::span<const double> probs, int k, bool rank_order = false);

HardSummary assemble_hard_summary(const PreparedExample& ex, std::vector<int> indices);

/// `rng` is required for SelectMode::sample; `rank_order` applies to argmax.
HardSummary hard_select(std::span<const double> probs, const PreparedExample& ex, int k, SelectMode mode,
                        Rng* rng = nullptr, bool rank_order = false);

/// e x M matrix with column m = sum_l probs[l] * E[s_{l,m}]; pads take part
/// through the PAD embedding.
Var soft_blend(Var probs, const PreparedExample& ex, Var table);

}  // namespace c2f
