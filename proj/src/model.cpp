#include "c2f/model.hpp"

#include "c2f/util.hpp"

#include <functional>

namespace c2f {

ModelShape ModelShape::from(const RunConfig& cfg, int vocab_size) {
  ModelShape s;
  s.vocab = vocab_size;
  s.embed = cfg.embed;
  s.hidden = cfg.hidden;
  s.selector_hidden = cfg.selector_hidden;
  s.onehot = cfg.sentences;
  s.selector = cfg.selector;
  s.filters = cfg.filters;
  s.width = cfg.width;
  s.chunk_size = cfg.chunk_size;
  s.chunk_fixed_j = cfg.chunk_fixed_j;
  return s;
}

namespace {

Model build(const ModelShape& s, const std::function<Mat(Eigen::Index, Eigen::Index, bool)>& init) {
  if (s.vocab <= kFirstPlaceholder || s.embed < 1 || s.hidden < 1) throw std::invalid_argument("invalid model shape");
  Model m;
  m.shape = s;
  const Eigen::Index V = s.vocab, e = s.embed, H = s.hidden, h = s.selector_hidden, O = s.onehot;
  m.embedding = &m.params.add("embedding", init(V, e, false));
  if (s.selector == SelectorKind::cnn) {
    m.conv_w = &m.params.add("selector.conv_w", init(s.filters, e * s.width, false));
    m.conv_b = &m.params.add("selector.conv_b", init(s.filters, 1, true));
    m.cnn_w = &m.params.add("selector.w", init(h, s.filters + O, false));
    m.cnn_v = &m.params.add("selector.v", init(h, 1, false));
  } else {
    m.sel_w = &m.params.add("selector.w", init(h, 2 * e + O, false));
    m.sel_v = &m.params.add("selector.v", init(h, 1, false));
  }
  m.enc_w = &m.params.add("encoder.w", init(3 * H, e, false));
  m.enc_u = &m.params.add("encoder.u", init(3 * H, H, false));
  m.enc_b = &m.params.add("encoder.b", init(3 * H, 1, true));
  m.dec_w = &m.params.add("decoder.w", init(3 * H, e, false));
  m.dec_u = &m.params.add("decoder.u", init(3 * H, H, false));
  m.dec_b = &m.params.add("decoder.b", init(3 * H, 1, true));
  m.out_proj = &m.params.add("output.proj", init(e, H, false));
  m.out_bias = &m.params.add("output.bias", init(V, 1, true));
  return m;
}

}  // namespace

Model Model::create(const ModelShape& shape, std::uint64_t seed, double scale) {
  Rng rng = named_stream(seed, "init");
  return build(shape, [&](Eigen::Index r, Eigen::Index c, bool bias) {
    Mat m = Mat::Zero(r, c);
    if (!bias) {
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * scale;
      }
    }
    return m;
  });
}

Model Model::zeros(const ModelShape& shape) {
  return build(shape, [](Eigen::Index r, Eigen::Index c, bool) { return Mat(Mat::Zero(r, c)); });
}

Bound::Bound(Tape& t, Model& m)
    : tape(t),
      model(m),
      embedding(t.param(*m.embedding)),
      encoder{t.param(*m.enc_w), t.param(*m.enc_u), t.param(*m.enc_b)},
      decoder{t.param(*m.dec_w), t.param(*m.dec_u), t.param(*m.dec_b)},
      out_proj(t.param(*m.out_proj)),
      out_bias(t.param(*m.out_bias)) {}

}  // namespace c2f
