#pragma once

#include "c2f/config.hpp"
#include "c2f/tensor.hpp"

#include <cstdint>

namespace c2f {

using Real = double;
using Mat = ad::Matrix<Real>;
using Var = ad::Var<Real>;
using Tape = ad::Tape<Real>;
using Parameter = ad::Parameter<Real>;
using ParameterSet = ad::ParameterSet<Real>;

struct ModelShape {
  int vocab = 0;
  int embed = 64;
  int hidden = 128;
  int selector_hidden = 128;
  int onehot = 35;
  SelectorKind selector = SelectorKind::bow;
  int filters = 64;
  int width = 5;
  int chunk_size = 7;
  bool chunk_fixed_j = false;

  static ModelShape from(const RunConfig& cfg, int vocab_size);
};

/// All learnable parameters. One embedding table `embedding` (V x e) feeds
/// the selector, the encoder, the decoder input and (through `out_proj`) the
/// output layer.
struct Model {
  ModelShape shape;
  ParameterSet params;

  Parameter* embedding = nullptr;
  // bow / chunk selector: score = v^T relu(W [q; s; onehot])
  Parameter* sel_w = nullptr;  // h x (2e + onehot)
  Parameter* sel_v = nullptr;  // h x 1
  // cnn selector
  Parameter* conv_w = nullptr;  // F x (e * w)
  Parameter* conv_b = nullptr;  // F x 1
  Parameter* cnn_w = nullptr;   // h x (F + onehot)
  Parameter* cnn_v = nullptr;   // h x 1
  // GRUs, stacked [z; r; candidate]
  Parameter* enc_w = nullptr;  // 3H x e
  Parameter* enc_u = nullptr;  // 3H x H
  Parameter* enc_b = nullptr;  // 3H x 1
  Parameter* dec_w = nullptr;
  Parameter* dec_u = nullptr;
  Parameter* dec_b = nullptr;
  // logits = E (P h) + b
  Parameter* out_proj = nullptr;  // e x H
  Parameter* out_bias = nullptr;  // V x 1

  /// Weights uniform in [-scale, scale], biases zero.
  static Model create(const ModelShape& shape, std::uint64_t seed, double scale = 0.08);
  /// Empty-valued parameters of the right shapes, for loading.
  static Model zeros(const ModelShape& shape);
};

/// Model parameters bound as leaves of one tape.
struct Bound {
  Bound(Tape& tape, Model& model);

  Tape& tape;
  Model& model;
  Var embedding;
  ad::GruWeights<Real> encoder;
  ad::GruWeights<Real> decoder;
  Var out_proj;
  Var out_bias;

  Var sel_w() const { return tape.param(*model.sel_w); }
  Var sel_v() const { return tape.param(*model.sel_v); }
};

}  // namespace c2f
