#include "c2f/selection.hpp"

#include <algorithm>

namespace c2f {

std::vector<double> SelectionDistribution::values() const {
  const Mat& p = probs.value();
  return {p.data(), p.data() + p.size()};
}

Var bow_repr(Var table, std::span<const int> ids) {
  std::vector<int> kept;
  for (int id : ids) {
    if (id != kPad) kept.push_back(id);
  }
  if (kept.empty()) throw ad::ShapeError("bow_repr: input has no non-pad tokens");
  return ad::mean_lookup(table, {kept});
}

Mat sentence_index_onehots(int sentences, int dim) {
  if (sentences > dim) {
    throw ad::ShapeError("sentence index " + std::to_string(sentences - 1) + " exceeds one-hot dimension " +
                         std::to_string(dim));
  }
  Mat m = Mat::Zero(dim, sentences);
  for (int l = 0; l < sentences; ++l) m(l, l) = 1.0;
  return m;
}

namespace {

std::vector<int> non_pad(std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id != kPad) out.push_back(id);
  }
  return out;
}

/// logits (1 x N) = v^T relu(W [q; segment_n; onehot(parent_n)]) for the
/// query and N token segments.
Var feed_forward_logits(Bound& b, Var w, Var v, Var query_repr, Var segment_reprs, const Mat& onehots) {
  Tape& t = b.tape;
  const Eigen::Index n = segment_reprs.cols();
  Var h = ad::vcat({ad::tile_cols(query_repr, n), segment_reprs, t.constant(onehots)});
  return ad::matmul(ad::transpose(v), ad::relu(ad::matmul(w, h)));
}

Mat parent_onehots(const std::vector<int>& parent, int dim) {
  Mat m = Mat::Zero(dim, static_cast<Eigen::Index>(parent.size()));
  for (std::size_t n = 0; n < parent.size(); ++n) {
    if (parent[n] >= dim) throw ad::ShapeError("sentence index exceeds one-hot dimension");
    m(parent[n], static_cast<Eigen::Index>(n)) = 1.0;
  }
  return m;
}

void require_sentences(const PreparedExample& ex) {
  if (ex.sentence_count() < 1) throw ad::ShapeError("selection: document has no sentences");
}

}  // namespace

SelectionDistribution score_bow(Bound& b, const PreparedExample& ex) {
  require_sentences(ex);
  const int L = ex.sentence_count();
  std::vector<std::vector<int>> segments;
  segments.push_back(non_pad(ex.query));
  for (int l = 0; l < L; ++l) segments.push_back(non_pad(ex.tokens(l)));
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].empty()) {
      throw ad::ShapeError(i == 0 ? "bow_repr: query has no non-pad tokens"
                                  : "bow_repr: sentence " + std::to_string(i - 1) + " has no non-pad tokens");
    }
  }
  Var reprs = ad::mean_lookup(b.embedding, segments);
  Var logits = feed_forward_logits(b, b.sel_w(), b.sel_v(), ad::col(reprs, 0), ad::slice_cols(reprs, 1, L),
                                   sentence_index_onehots(L, b.model.shape.onehot));
  return {ad::softmax(logits), ad::log_softmax(logits), std::nullopt, {}};
}

SelectionDistribution score_chunked(Bound& b, const PreparedExample& ex, const ChunkOptions& opts) {
  require_sentences(ex);
  if (opts.chunk_size < 1) throw std::invalid_argument("chunk size must be >= 1");
  const int L = ex.sentence_count();
  const auto cs = static_cast<std::size_t>(opts.chunk_size);
  std::vector<std::vector<int>> segments;
  segments.push_back(non_pad(ex.query));
  if (segments.front().empty()) throw ad::ShapeError("bow_repr: query has no non-pad tokens");
  std::vector<int> parent;
  std::vector<Eigen::Index> per_sentence;
  for (int l = 0; l < L; ++l) {
    std::span<const int> src = opts.fixed_j ? std::span<const int>(ex.rows[static_cast<std::size_t>(l)]) : ex.tokens(l);
    if (src.empty()) throw ad::ShapeError("bow_repr: sentence " + std::to_string(l) + " has no non-pad tokens");
    Eigen::Index count = 0;
    for (std::size_t start = 0; start < src.size(); start += cs) {
      const std::size_t end = std::min(src.size(), start + cs);
      segments.emplace_back(src.begin() + static_cast<std::ptrdiff_t>(start), src.begin() + static_cast<std::ptrdiff_t>(end));
      parent.push_back(l);
      ++count;
    }
    per_sentence.push_back(count);
  }
  const auto N = static_cast<Eigen::Index>(parent.size());
  Var reprs = ad::mean_lookup(b.embedding, segments);
  Var logits = feed_forward_logits(b, b.sel_w(), b.sel_v(), ad::col(reprs, 0), ad::slice_cols(reprs, 1, N),
                                   parent_onehots(parent, b.model.shape.onehot));
  Var chunk_probs = ad::softmax(logits);
  Var chunk_logp = ad::log_softmax(logits);
  SelectionDistribution out{ad::segment_sum(chunk_probs, per_sentence), ad::segment_logsumexp(chunk_logp, per_sentence),
                            chunk_probs, parent};
  return out;
}

SelectionDistribution score_cnn(Bound& b, const PreparedExample& ex) {
  require_sentences(ex);
  Model& m = b.model;
  Tape& t = b.tape;
  const int L = ex.sentence_count();
  const int w = m.shape.width;
  const std::vector<int> query = non_pad(ex.query);
  if (query.empty()) throw ad::ShapeError("score_cnn: query has no non-pad tokens");

  std::vector<Var> windows;
  std::vector<Eigen::Index> positions;
  for (int l = 0; l < L; ++l) {
    std::vector<int> ids = query;
    const auto& row = ex.rows[static_cast<std::size_t>(l)];
    ids.insert(ids.end(), row.begin(), row.end());
    if (static_cast<int>(ids.size()) < w) ids.resize(static_cast<std::size_t>(w), kPad);
    windows.push_back(ad::unfold(ad::lookup(b.embedding, std::span<const int>(ids)), w));
    positions.push_back(windows.back().cols());
  }
  Var conv = ad::add_colwise(ad::matmul(t.param(*m.conv_w), ad::hcat(std::span<const Var>(windows))),
                             t.param(*m.conv_b));
  std::vector<Var> pooled;
  Eigen::Index off = 0;
  for (int l = 0; l < L; ++l) {
    pooled.push_back(ad::max_cols(ad::slice_cols(conv, off, positions[static_cast<std::size_t>(l)])));
    off += positions[static_cast<std::size_t>(l)];
  }
  Var h = ad::vcat({ad::hcat(std::span<const Var>(pooled)), t.constant(sentence_index_onehots(L, m.shape.onehot))});
  Var logits = ad::matmul(ad::transpose(t.param(*m.cnn_v)), ad::relu(ad::matmul(t.param(*m.cnn_w), h)));
  return {ad::softmax(logits), ad::log_softmax(logits), std::nullopt, {}};
}

SelectionDistribution score_sentences(Bound& b, const PreparedExample& ex) {
  switch (b.model.shape.selector) {
    case SelectorKind::bow: return score_bow(b, ex);
    case SelectorKind::chunk:
      return score_chunked(b, ex, {b.model.shape.chunk_size, b.model.shape.chunk_fixed_j});
    case SelectorKind::cnn: return score_cnn(b, ex);
  }
  throw std::logic_error("unknown selector kind");
}

}  // namespace c2f
