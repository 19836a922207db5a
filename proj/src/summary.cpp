#include "c2f/summary.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace c2f {

std::vector<int> sample_without_replacement(std::span<const double> probs, int k, Rng& rng) {
  const int L = static_cast<int>(probs.size());
  const int draws = std::min(k, L);
  std::vector<bool> used(probs.size(), false);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(draws));
  for (int d = 0; d < draws; ++d) {
    double mass = 0;
    for (int l = 0; l < L; ++l) {
      if (!used[static_cast<std::size_t>(l)]) mass += probs[static_cast<std::size_t>(l)];
    }
    int pick = -1;
    if (mass > 0) {
      const double u = uniform01(rng) * mass;
      double acc = 0;
      for (int l = 0; l < L; ++l) {
        if (used[static_cast<std::size_t>(l)] || probs[static_cast<std::size_t>(l)] <= 0) continue;
        acc += probs[static_cast<std::size_t>(l)];
        pick = l;
        if (u < acc) break;
      }
    }
    if (pick < 0) {
      // No probability mass left: take the lowest unused index.
      for (int l = 0; l < L && pick < 0; ++l) {
        if (!used[static_cast<std::size_t>(l)]) pick = l;
      }
    }
    used[static_cast<std::size_t>(pick)] = true;
    out.push_back(pick);
  }
  return out;
}

std::vector<int> top_k(std::span<const double> probs, int k, bool rank_order) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(std::max(k, 0))));
  if (!rank_order) std::sort(order.begin(), order.end());
  return order;
}

HardSummary assemble_hard_summary(const PreparedExample& ex, std::vector<int> indices) {
  HardSummary s;
  const auto M = static_cast<std::size_t>(ex.max_tokens());
  for (int l : indices) {
    if (l < 0 || l >= ex.sentence_count()) throw std::out_of_range("summary sentence index out of range");
    auto toks = ex.tokens(l);
    s.tokens.insert(s.tokens.end(), toks.begin(), toks.end());
  }
  s.tokens.resize(indices.size() * M, kPad);
  s.indices = std::move(indices);
  return s;
}

HardSummary hard_select(std::span<const double> probs, const PreparedExample& ex, int k, SelectMode mode, Rng* rng, bool rank_order) {
  if (k < 1) throw std::invalid_argument("hard_select: K must be >= 1");
  if (static_cast<int>(probs.size()) != ex.sentence_count()) {
    throw std::invalid_argument("hard_select: distribution size does not match the document");
  }
  std::vector<int> idx;
  if (mode == SelectMode::sample) {
    if (rng == nullptr) throw std::invalid_argument("hard_select: sample mode needs an rng");
    idx = sample_without_replacement(probs, k, *rng);
  } else {
    idx = top_k(probs, k, rank_order);
  }
  HardSummary s = assemble_hard_summary(ex, std::move(idx));
  s.clipped = k > ex.sentence_count();
  return s;
}

Var soft_blend(Var probs, const PreparedExample& ex, Var table) {
  if (probs.size() != ex.sentence_count()) {
    throw ad::ShapeError("soft_blend: distribution " + ad::shape_of(probs.value()) + " for " +
                         std::to_string(ex.sentence_count()) + " sentences");
  }
  std::vector<Var> rows;
  rows.reserve(ex.rows.size());
  for (const auto& r : ex.rows) rows.push_back(ad::lookup(table, std::span<const int>(r)));
  return ad::mix(std::span<const Var>(rows), probs);
}

}  // namespace c2f
