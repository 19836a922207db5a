// Shared helpers for the test binaries: finite-difference gradient oracle,
// tiny models and hand-built examples.
#pragma once

#include "c2f/model.hpp"
#include "c2f/text.hpp"
#include "c2f/util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace c2f::testing {

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;  // "param[index]"
  int checked = 0;
};

using LossBuilder = std::function<Var(Bound&)>;
using TapeLoss = std::function<Var(Tape&, std::vector<Var>&)>;

/// Compares d(loss)/d(theta) from the tape against central differences of
/// step `h` for every `stride`-th scalar of every parameter in `params`.
inline GradCheck check_param_gradients(ParameterSet& params, const TapeLoss& loss, double h = 1e-5,
                                       int stride = 1) {
  auto bind = [&](Tape& tape) {
    std::vector<Var> vars;
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.param(params[i]));
    return vars;
  };
  params.zero_grad();
  {
    Tape tape;
    auto vars = bind(tape);
    tape.backward(loss(tape, vars));
  }
  auto eval = [&] {
    Tape tape(Tape::Mode::inference);
    auto vars = bind(tape);
    return loss(tape, vars).scalar();
  };
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    for (Eigen::Index k = 0; k < p.value.size(); k += stride) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = rel_error(p.grad.data()[k], numeric);
      ++out.checked;
      if (err > out.max_rel) {
        out.max_rel = err;
        out.worst = p.name + "[" + std::to_string(k) + "] analytic " + std::to_string(p.grad.data()[k]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Same check over a whole model, with its parameters bound through Bound.
inline GradCheck check_gradients(Model& model, const LossBuilder& loss, double h = 1e-5, int stride = 1) {
  return check_param_gradients(
      model.params,
      [&](Tape& tape, std::vector<Var>&) {
        Bound b(tape, model);
        return loss(b);
      },
      h, stride);
}

/// Matrix with entries uniform in [-scale, scale].
inline Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * (2 * uniform01(rng) - 1);
  return m;
}

/// Vocabulary with `words` regular tokens named w0, w1, ...
inline Vocabulary toy_vocab(int words, int placeholders = 2) {
  std::vector<std::string> w;
  for (int i = 0; i < words; ++i) w.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(w), placeholders);
}

/// Random example over ids [first_word, vocab) with L sentences of length in
/// [1, M], answer of 1-2 tokens.
inline PreparedExample random_example(Rng& rng, int vocab, int L, int M, int query_len = 2) {
  const int first = kFirstPlaceholder;
  auto id = [&] { return first + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(vocab - first))); };
  PreparedExample ex;
  for (int i = 0; i < query_len; ++i) ex.query.push_back(id());
  for (int l = 0; l < L; ++l) {
    const int len = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(M)));
    std::vector<int> row(static_cast<std::size_t>(M), kPad);
    for (int m = 0; m < len; ++m) row[static_cast<std::size_t>(m)] = id();
    ex.rows.push_back(row);
    ex.lengths.push_back(len);
  }
  const int alen = 1 + static_cast<int>(uniform_below(rng, 2));
  for (int i = 0; i < alen; ++i) ex.answer.push_back(id());
  ex.answer.push_back(kEos);
  ex.gold = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(L)));
  return ex;
}

/// Tiny model shape for gradient checks.
inline ModelShape tiny_shape(int vocab, SelectorKind kind = SelectorKind::bow) {
  ModelShape s;
  s.vocab = vocab;
  s.embed = 3;
  s.hidden = 4;
  s.selector_hidden = 3;
  s.onehot = 5;
  s.selector = kind;
  s.filters = 2;
  s.width = 2;
  s.chunk_size = 2;
  return s;
}

}  // namespace c2f::testing
