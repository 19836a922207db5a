#include "c2f/answer.hpp"

#include <algorithm>
#include <stdexcept>

namespace c2f {

std::vector<int> hard_encoder_ids(std::span<const int> query, std::span<const int> summary, bool process_pads) {
  if (query.empty()) throw ad::ShapeError("encode: empty query");
  std::vector<int> ids(query.begin(), query.end());
  ids.push_back(kSeparator);
  for (int id : summary) {
    if (process_pads || id != kPad) ids.push_back(id);
  }
  return ids;
}

std::vector<int> flat_encoder_ids(std::span<const int> query, std::span<const int> document) {
  if (query.empty()) throw ad::ShapeError("encode: empty query");
  std::vector<int> ids(query.begin(), query.end());
  ids.insert(ids.end(), document.begin(), document.end());
  return ids;
}

Var encode_inputs(Bound& b, Var inputs) {
  const auto& enc = b.encoder;
  if (inputs.rows() != enc.input.cols()) {
    throw ad::ShapeError("encode: inputs " + ad::shape_of(inputs.value()) + " do not match encoder weights " +
                         ad::shape_of(enc.input.value()));
  }
  Var projected = ad::add_colwise(ad::matmul(enc.input, inputs), enc.bias);
  Var h = b.tape.constant(Mat::Zero(enc.hidden_size(), 1));
  for (Eigen::Index t = 0; t < inputs.cols(); ++t) h = ad::gru_step(h, ad::col(projected, t), enc.hidden);
  return h;
}

Var encode_hard(Bound& b, std::span<const int> query, std::span<const int> summary, bool process_pads) {
  const auto ids = hard_encoder_ids(query, summary, process_pads);
  return encode_inputs(b, ad::lookup(b.embedding, std::span<const int>(ids)));
}

Var encode_soft(Bound& b, std::span<const int> query, Var blended) {
  if (query.empty()) throw ad::ShapeError("encode: empty query");
  std::vector<int> head(query.begin(), query.end());
  head.push_back(kSeparator);
  return encode_inputs(b, ad::hcat({ad::lookup(b.embedding, std::span<const int>(head)), blended}));
}

Var encode_flat(Bound& b, std::span<const int> query, std::span<const int> document) {
  const auto ids = flat_encoder_ids(query, document);
  return encode_inputs(b, ad::lookup(b.embedding, std::span<const int>(ids)));
}

Var encode_batch(Bound& b, const std::vector<std::vector<int>>& sequences) {
  if (sequences.empty()) throw ad::ShapeError("encode_batch: no sequences");
  std::size_t T = 0;
  for (const auto& s : sequences) T = std::max(T, s.size());
  const std::size_t B = sequences.size();
  // Time-major layout: column t * B + j holds step t of sequence j.
  std::vector<int> ids(T * B, kPad);
  for (std::size_t j = 0; j < B; ++j) {
    const std::size_t offset = T - sequences[j].size();
    for (std::size_t t = 0; t < sequences[j].size(); ++t) ids[(offset + t) * B + j] = sequences[j][t];
  }
  const auto& enc = b.encoder;
  Var projected = ad::add_colwise(ad::matmul(enc.input, ad::lookup(b.embedding, std::span<const int>(ids))), enc.bias);
  const auto Bi = static_cast<Eigen::Index>(B);
  Var h = b.tape.constant(Mat::Zero(enc.hidden_size(), Bi));
  for (std::size_t t = 0; t < T; ++t) {
    h = ad::gru_step(h, ad::slice_cols(projected, static_cast<Eigen::Index>(t) * Bi, Bi), enc.hidden);
  }
  return h;
}

Var output_logits(Bound& b, Var states) {
  return ad::add_colwise(ad::matmul(b.embedding, ad::matmul(b.out_proj, states)), b.out_bias);
}

Var decode_loglik(Bound& b, Var state, std::span<const int> target) {
  if (target.empty()) throw std::invalid_argument("decode_loglik: empty target");
  if (target.back() != kEos) throw std::invalid_argument("decode_loglik: target must end with EOS");
  if (state.rows() != b.decoder.hidden_size() || state.cols() != 1) {
    throw ad::ShapeError("decode_loglik: state " + ad::shape_of(state.value()) + " does not match the decoder");
  }
  std::vector<int> inputs;
  inputs.reserve(target.size());
  inputs.push_back(kBos);
  inputs.insert(inputs.end(), target.begin(), target.end() - 1);
  const auto& dec = b.decoder;
  Var projected = ad::add_colwise(ad::matmul(dec.input, ad::lookup(b.embedding, std::span<const int>(inputs))), dec.bias);
  std::vector<Var> states;
  states.reserve(inputs.size());
  Var h = state;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    h = ad::gru_step(h, ad::col(projected, static_cast<Eigen::Index>(t)), dec.hidden);
    states.push_back(h);
  }
  return ad::column_log_likelihood(output_logits(b, ad::hcat(std::span<const Var>(states))), target);
}

AnswerPrediction decode_greedy(Bound& b, Var state, int max_len, const Vocabulary& vocab,
                               const PlaceholderMap& placeholders) {
  if (max_len < 1) throw std::invalid_argument("decode_greedy: max length must be >= 1");
  AnswerPrediction out;
  Var h = state;
  int prev = kBos;
  for (int step = 0; step < max_len; ++step) {
    const int in = prev;
    h = ad::gru_cell(h, ad::lookup(b.embedding, std::span<const int>(&in, 1)), b.decoder);
    const Mat& z = output_logits(b, h).value();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < z.rows(); ++i) {
      if (z(i, 0) > z(best, 0)) best = i;
    }
    const double m = z(best, 0);
    out.log_prob += -std::log((z.array() - m).exp().sum());
    out.ids.push_back(static_cast<int>(best));
    prev = static_cast<int>(best);
    if (prev == kEos) break;
  }
  out.surface = render_answer(out.ids, vocab, placeholders);
  return out;
}

}  // namespace c2f
