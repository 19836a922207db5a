#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "c2f/optim.hpp"
#include "support.hpp"

#include <array>
#include <cstring>

using namespace c2f;
using namespace c2f::testing;

namespace {

constexpr double kGradTol = 1e-4;

// One primitive under test: builds a scalar loss from the bound parameters.
struct Case {
  const char* name;
  std::vector<std::pair<int, int>> shapes;
  TapeLoss loss;
};

// Random linear read-out so every output coordinate reaches the loss with a
// distinct weight.
Var readout(Tape& t, Var y, Rng& rng) {
  const Mat w = random_matrix(rng, y.rows(), y.cols());
  return ad::sum(ad::cmul(y, t.constant(w)));
}

std::vector<Case> primitive_cases(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  auto ro = [rng](Tape& t, Var y) {
    Rng local = *rng;
    return readout(t, y, local);
  };
  std::vector<Case> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, v[0] * v[1]); }});
  cases.push_back({"add_sub", {{2, 3}, {2, 3}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, (v[0] + v[1]) - ad::cmul(v[0], v[1])); }});
  cases.push_back({"affine", {{3, 2}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, ad::affine(v[0], 1.7, -0.3)); }});
  cases.push_back({"add_colwise", {{3, 4}, {3, 1}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, ad::add_colwise(v[0], v[1])); }});
  cases.push_back({"tile_transpose", {{3, 1}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, ad::transpose(ad::tile_cols(v[0], 4))); }});
  cases.push_back({"vcat_hcat", {{2, 3}, {1, 3}, {3, 2}}, [ro](Tape& t, std::vector<Var>& v) {
                     Var a = ad::vcat({v[0], v[1]});
                     return ro(t, ad::hcat({a, v[2]}));
                   }});
  cases.push_back({"slices", {{4, 5}}, [ro](Tape& t, std::vector<Var>& v) {
                     return ro(t, ad::slice_cols(ad::slice_rows(v[0], 1, 2), 2, 3)) + ad::pick(ad::col(v[0], 4), 3);
                   }});
  cases.push_back({"mean_max_cols", {{3, 5}}, [ro](Tape& t, std::vector<Var>& v) {
                     return ro(t, ad::mean_cols(v[0])) + ro(t, ad::max_cols(v[0]));
                   }});
  cases.push_back({"segments", {{1, 6}}, [ro](Tape& t, std::vector<Var>& v) {
                     return ro(t, ad::segment_sum(v[0], {2, 1, 3})) + ro(t, ad::segment_logsumexp(v[0], {3, 3})) +
                            ad::logsumexp_subset(v[0], {0, 2, 5});
                   }});
  cases.push_back({"nonlinear", {{3, 3}}, [ro](Tape& t, std::vector<Var>& v) {
                     Var x = v[0];
                     return ro(t, ad::tanh(x)) + ro(t, ad::sigmoid(x)) + ro(t, ad::exp(x)) + ro(t, ad::relu(x)) +
                            ro(t, ad::log(ad::affine(ad::sigmoid(x), 1.0, 0.1)));
                   }});
  cases.push_back({"softmax", {{1, 5}}, [ro](Tape& t, std::vector<Var>& v) {
                     return ro(t, ad::softmax(v[0])) + ro(t, ad::log_softmax(v[0]));
                   }});
  cases.push_back({"column_log_likelihood", {{4, 3}}, [](Tape&, std::vector<Var>& v) {
                     const std::array<int, 3> y{2, 0, 3};
                     return ad::column_log_likelihood(v[0], std::span<const int>(y));
                   }});
  cases.push_back({"lookup", {{5, 3}}, [ro](Tape& t, std::vector<Var>& v) {
                     const std::array<int, 4> ids{1, 4, 1, 0};
                     return ro(t, ad::lookup(v[0], std::span<const int>(ids))) +
                            ro(t, ad::mean_lookup(v[0], {{0, 2}, {3}, {4, 4, 1}}));
                   }});
  cases.push_back({"unfold", {{2, 5}}, [ro](Tape& t, std::vector<Var>& v) { return ro(t, ad::unfold(v[0], 3)); }});
  cases.push_back({"mix", {{2, 3}, {2, 3}, {2, 3}, {1, 3}}, [ro](Tape& t, std::vector<Var>& v) {
                     std::vector<Var> parts{v[0], v[1], v[2]};
                     return ro(t, ad::mix(std::span<const Var>(parts), ad::softmax(v[3])));
                   }});
  cases.push_back({"gru_cell", {{4, 2}, {9, 3}, {9, 3}, {9, 1}, {3, 2}}, [ro](Tape& t, std::vector<Var>& v) {
                     ad::GruWeights<Real> w{v[1], v[2], v[3]};
                     Var h = v[4];
                     for (int s = 0; s < 2; ++s) h = ad::gru_cell(h, ad::slice_rows(v[0], 0, 3), w);
                     return ro(t, h);
                   }});
  return cases;
}

}  // namespace

TEST_CASE("primitive gradients match central differences over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (auto& c : primitive_cases(seed)) {
      Rng rng(seed * 7919 + 13);
      ParameterSet params;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) {
        params.add("p" + std::to_string(i), random_matrix(rng, c.shapes[i].first, c.shapes[i].second));
      }
      const GradCheck g = check_param_gradients(params, c.loss);
      INFO(c.name << " seed " << seed << " worst " << g.worst);
      CHECK(g.max_rel < kGradTol);
    }
  }
}

TEST_CASE("softmax of equal logits is uniform") {
  for (double c : {-50.0, 0.0, 3.5, 700.0}) {
    Tape t;
    Var p = ad::softmax(t.constant(Mat::Constant(1, 3, c)));
    for (int i = 0; i < 3; ++i) CHECK(p.value()(0, i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  Tape t;
  CHECK(ad::softmax(t.constant(Mat::Constant(1, 1, -4.2))).value()(0, 0) == 1.0);
}

TEST_CASE("softmax normalizes and is shift invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(uniform_below(rng, 30));
    const Mat z = random_matrix(rng, 1, n, 20.0);
    const double shift = 100 * (2 * uniform01(rng) - 1);
    Tape t;
    const Mat p = ad::softmax(t.constant(z)).value();
    const Mat q = ad::softmax(t.constant((z.array() + shift).matrix())).value();
    CHECK(std::abs(p.sum() - 1.0) < 1e-9);
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((p.array() >= 0).all());
  }
}

TEST_CASE("max over time pools per feature") {
  Tape t;
  Mat x(2, 3);
  x << 1, 3, 0, 5, 2, 4;  // feature-major: time steps [1,5], [3,2], [0,4]
  Var m = ad::max_cols(t.constant(x));
  CHECK(m.value()(0, 0) == 3);
  CHECK(m.value()(1, 0) == 5);
}

TEST_CASE("gru with zero weights halves the state") {
  Tape t;
  Mat h0(2, 1);
  h0 << 0.8, -0.4;
  ad::GruWeights<Real> w{t.constant(Mat::Zero(6, 3)), t.constant(Mat::Zero(6, 2)), t.constant(Mat::Zero(6, 1))};
  Var h = ad::gru_cell(t.constant(h0), t.constant(Mat::Constant(3, 1, 0.7)), w);
  CHECK(h.value()(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(h.value()(1, 0) == doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("gru from a zero state with no candidate input stays at zero") {
  Rng rng(3);
  Tape t;
  Mat W = random_matrix(rng, 6, 3);
  W.bottomRows(2).setZero();
  Mat b = random_matrix(rng, 6, 1);
  b.bottomRows(2).setZero();
  ad::GruWeights<Real> w{t.constant(W), t.constant(random_matrix(rng, 6, 2)), t.constant(b)};
  Var h = ad::gru_cell(t.constant(Mat::Zero(2, 1)), t.constant(random_matrix(rng, 3, 1)), w);
  CHECK(h.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient of a weighted sum is the weight") {
  Rng rng(8);
  ParameterSet ps;
  auto& w = ps.add("w", random_matrix(rng, 3, 2));
  const Mat c = random_matrix(rng, 3, 2);
  Tape t;
  t.backward(ad::sum(ad::cmul(t.param(w), t.constant(c))));
  CHECK((w.grad - c).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss without parameters leaves gradients at zero") {
  Rng rng(8);
  ParameterSet ps;
  auto& w = ps.add("w", random_matrix(rng, 2, 2));
  Tape t;
  t.param(w);
  t.backward(ad::sum(t.constant(random_matrix(rng, 2, 2))));
  CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(21);
  ParameterSet ps;
  ps.add("a", random_matrix(rng, 9, 3));
  ps.add("u", random_matrix(rng, 9, 3));
  ps.add("b", random_matrix(rng, 9, 1));
  const Mat x = random_matrix(rng, 3, 6);
  auto run = [&] {
    ps.zero_grad();
    Tape t;
    ad::GruWeights<Real> w{t.param(ps[0]), t.param(ps[1]), t.param(ps[2])};
    Var h = t.constant(Mat::Zero(3, 1));
    for (int s = 0; s < 6; ++s) h = ad::gru_cell(h, t.constant(x.col(s)), w);
    t.backward(ad::sum(ad::tanh(h)));
    std::vector<Mat> g;
    for (std::size_t i = 0; i < ps.size(); ++i) g.push_back(ps[i].grad);
    return g;
  };
  const auto g1 = run();
  const auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(std::memcmp(g1[i].data(), g2[i].data(), sizeof(double) * static_cast<std::size_t>(g1[i].size())) == 0);
  }
}

TEST_CASE("shape mismatches and non-finite values are rejected") {
  Tape t;
  CHECK_THROWS_AS(ad::matmul(t.constant(Mat::Zero(2, 3)), t.constant(Mat::Zero(2, 3))), ad::ShapeError);
  CHECK_THROWS_AS(ad::add(t.constant(Mat::Zero(2, 3)), t.constant(Mat::Zero(3, 2))), ad::ShapeError);
  CHECK_THROWS_AS(ad::log(t.constant(Mat::Zero(1, 1))), ad::NonFiniteError);
  const std::array<int, 1> bad{7};
  CHECK_THROWS_AS(ad::lookup(t.constant(Mat::Zero(3, 2)), std::span<const int>(bad)), ad::ShapeError);
  Tape inf(Tape::Mode::inference);
  CHECK_THROWS_AS(inf.backward(inf.scalar(1.0)), std::logic_error);
}

TEST_CASE("adam leaves parameters alone on a zero gradient") {
  ParameterSet ps;
  auto& p = ps.add("p", Mat::Constant(2, 2, 0.25));
  ad::Adam<Real> opt({.learning_rate = 0.1});
  opt.step(ps);
  CHECK((p.value.array() == 0.25).all());
}

TEST_CASE("adam first step moves by the learning rate") {
  ParameterSet ps;
  auto& p = ps.add("p", Mat::Constant(1, 1, 2.0));
  ad::Adam<Real> opt({.learning_rate = 0.1});
  p.grad(0, 0) = 1.0;
  opt.step(ps);
  // m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
  CHECK(std::abs((2.0 - p.value(0, 0)) - 0.1) < 1e-3);
  CHECK(p.value(0, 0) == doctest::Approx(2.0 - 0.1 / (1 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam matches a hand-rolled reference over several steps") {
  Rng rng(4);
  ParameterSet ps;
  auto& p = ps.add("p", random_matrix(rng, 3, 1));
  ad::Adam<Real> opt({.learning_rate = 0.01, .clip_norm = 1e9});
  Mat x = p.value, m = Mat::Zero(3, 1), v = Mat::Zero(3, 1);
  for (int t = 1; t <= 10; ++t) {
    const Mat g = random_matrix(rng, 3, 1);
    p.grad = g;
    opt.step(ps);
    m = 0.9 * m + 0.1 * g;
    v = (0.999 * v.array() + 0.001 * g.array().square()).matrix();
    const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.999, t);
    x.array() -= 0.01 * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }
  CHECK((p.value - x).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("clipping scales to the bound and never increases the norm") {
  ParameterSet ps;
  auto& a = ps.add("a", Mat::Zero(1, 2));
  auto& b = ps.add("b", Mat::Zero(2, 1));
  a.grad << 6, 0;
  b.grad << 0, 8;
  CHECK(ad::clip_global_norm(ps, 1.0) == doctest::Approx(10.0));
  CHECK(std::abs(ps.grad_norm() - 1.0) < 1e-9);

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    a.grad = random_matrix(rng, 1, 2, 5.0);
    b.grad = random_matrix(rng, 2, 1, 5.0);
    const double before = ps.grad_norm();
    const double bound = 10 * uniform01(rng) + 1e-3;
    ad::clip_global_norm(ps, bound);
    CHECK(ps.grad_norm() <= before + 1e-12);
    CHECK(ps.grad_norm() <= bound * (1 + 1e-12));
  }
}

TEST_CASE("adam reports the applied norm after clipping") {
  ParameterSet ps;
  auto& p = ps.add("p", Mat::Zero(2, 1));
  p.grad << 6, 8;
  ad::Adam<Real> opt({.learning_rate = 0.1, .clip_norm = 1.0});
  const auto r = opt.step(ps);
  CHECK(r.grad_norm == doctest::Approx(10.0));
  CHECK(std::abs(r.applied_norm - 1.0) < 1e-9);
}

TEST_CASE("adam skips non-finite gradients") {
  ParameterSet ps;
  auto& p = ps.add("p", Mat::Constant(1, 1, 1.0));
  p.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  ad::Adam<Real> opt;
  CHECK(opt.step(ps).skipped);
  CHECK(p.value(0, 0) == 1.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("fused gru steps are counted") {
  Tape t;
  ad::GruWeights<Real> w{t.constant(Mat::Zero(6, 3)), t.constant(Mat::Zero(6, 2)), t.constant(Mat::Zero(6, 1))};
  const auto before = ad::gru_step_counter;
  Var h = t.constant(Mat::Zero(2, 1));
  for (int s = 0; s < 5; ++s) h = ad::gru_cell(h, t.constant(Mat::Zero(3, 1)), w);
  CHECK(ad::gru_step_counter - before == 5);
}
