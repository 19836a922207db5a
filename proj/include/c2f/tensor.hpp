// Dense tensors with tape-based reverse-mode differentiation.
//
// Values are Eigen matrices. Vectors are n x 1 columns unless an operation
// says otherwise; sequences are stored feature-major (e x T, one column per
// time step). Every forward primitive checks shapes and rejects non-finite
// results.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace c2f::ad {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Derived>
std::string shape_of(const Eigen::MatrixBase<Derived>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// A named, persistent learnable array. Gradients accumulate into `grad`
/// across any number of tapes until zeroed.
template <class Scalar>
struct Parameter {
  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

/// Ordered collection of parameters with stable addresses.
template <class Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(std::string name, Matrix<Scalar> value) {
    if (find(name) != nullptr) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    params_.push_back(std::make_unique<Parameter<Scalar>>(std::move(name), std::move(value)));
    return *params_.back();
  }

  Parameter<Scalar>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }
  const Parameter<Scalar>* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  Scalar grad_norm() const {
    Scalar sq = 0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
};

template <class Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  Scalar scalar() const {
    if (size() != 1) throw ShapeError("scalar(): node is " + shape_of(value()));
    return value()(0, 0);
  }
  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Number of fused GRU steps executed on this thread. Used to instrument
/// encoder cost.
inline thread_local std::uint64_t gru_step_counter = 0;

template <class Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record; }

  Var<Scalar> constant(Mat value) {
    check_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), nullptr, nullptr, Mat(), false, {}});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var<Scalar> scalar(Scalar v) { return constant(Mat::Constant(1, 1, v)); }

  /// Leaf referencing a parameter. Repeated calls return the same node.
  Var<Scalar> param(Parameter<Scalar>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var<Scalar>(this, it->second);
    nodes_.push_back(Node{Mat(), &p.value, &p, Mat(), recording(), {}});
    int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return Var<Scalar>(this, id);
  }

  /// Records an operation result. `fn` receives the output gradient and
  /// must accumulate into its parents via grad().
  Var<Scalar> push(Mat value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn, const char* op) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    return push_impl(std::move(value), needs, std::move(fn), op);
  }
  Var<Scalar> push(Mat value, std::span<const Var<Scalar>> parents, BackwardFn fn, const char* op) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    return push_impl(std::move(value), needs, std::move(fn), op);
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref != nullptr ? *n.ref : n.value;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Mat& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      const Mat& v = value(id);
      n.grad = Mat::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  /// Back-propagates `seed * d(loss)` and adds parameter gradients into
  /// Parameter::grad. The loss must be 1x1.
  void backward(Var<Scalar> loss, Scalar seed = Scalar(1)) {
    if (!recording()) throw std::logic_error("backward() on an inference tape");
    if (loss.size() != 1) throw ShapeError("backward(): loss must be scalar, got " + shape_of(loss.value()));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad(loss.id())(0, 0) = seed;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr && n.grad.size() != 0) n.param->grad += n.grad;
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* ref;
    Parameter<Scalar>* param;
    Mat grad;
    bool needs_grad;
    BackwardFn backward;
  };

  static void check_finite(const Mat& v, const char* op) {
    if (!v.allFinite()) throw NonFiniteError(std::string(op) + ": non-finite value produced");
  }

  Var<Scalar> push_impl(Mat value, bool needs, BackwardFn fn, const char* op) {
    check_finite(value, op);
    needs = needs && recording();
    nodes_.push_back(Node{std::move(value), nullptr, nullptr, Mat(), needs, needs ? std::move(fn) : BackwardFn{}});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Mode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, int> param_ids_;
};

namespace detail {

template <class Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

template <class Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_of(a.value()) + " and " + shape_of(b.value()) +
                     " differ");
  }
}

template <class Scalar>
void require_vector(const Var<Scalar>& a, const char* op) {
  if (a.rows() != 1 && a.cols() != 1) {
    throw ShapeError(std::string(op) + ": expected a vector, got " + shape_of(a.value()));
  }
}

template <class Scalar>
Matrix<Scalar> shaped_like(const Var<Scalar>& v, Index n) {
  return v.cols() == 1 ? Matrix<Scalar>(n, 1) : Matrix<Scalar>(1, n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shapes " + shape_of(a.value()) + " and " + shape_of(b.value()) + " do not conform");
  }
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape()->push(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.needs_grad(a.id())) t.grad(a.id()).noalias() += g * b.value().transpose();
                          if (t.needs_grad(b.id())) t.grad(b.id()).noalias() += a.value().transpose() * g;
                        },
                        "matmul");
}

template <class Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "add");
  return a.tape()->push(a.value() + b.value(), {a, b},
                        [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.needs_grad(a.id())) t.grad(a.id()) += g;
                          if (t.needs_grad(b.id())) t.grad(b.id()) += g;
                        },
                        "add");
}

template <class Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape()->push(a.value() - b.value(), {a, b},
                        [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.needs_grad(a.id())) t.grad(a.id()) += g;
                          if (t.needs_grad(b.id())) t.grad(b.id()) -= g;
                        },
                        "sub");
}

/// Elementwise product.
template <class Scalar>
Var<Scalar> cmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "cmul");
  return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b},
                        [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.needs_grad(a.id())) t.grad(a.id()) += g.cwiseProduct(b.value());
                          if (t.needs_grad(b.id())) t.grad(b.id()) += g.cwiseProduct(a.value());
                        },
                        "cmul");
}

/// alpha * a + beta, elementwise.
template <class Scalar>
Var<Scalar> affine(Var<Scalar> a, Scalar alpha, Scalar beta = Scalar(0)) {
  Matrix<Scalar> out = (alpha * a.value().array() + beta).matrix();
  return a.tape()->push(std::move(out), {a},
                        [a, alpha](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(a.id()) += alpha * g; },
                        "affine");
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar alpha) {
  return affine(a, alpha);
}

/// Adds column vector `b` (n x 1) to every column of `a` (n x T).
template <class Scalar>
Var<Scalar> add_colwise(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b, "add_colwise");
  if (b.cols() != 1 || b.rows() != a.rows()) {
    throw ShapeError("add_colwise: cannot broadcast " + shape_of(b.value()) + " over " + shape_of(a.value()));
  }
  Matrix<Scalar> out = a.value().colwise() + b.value().col(0);
  return a.tape()->push(std::move(out), {a, b},
                        [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.needs_grad(a.id())) t.grad(a.id()) += g;
                          if (t.needs_grad(b.id())) t.grad(b.id()) += g.rowwise().sum();
                        },
                        "add_colwise");
}

/// Repeats column vector `v` (n x 1) into an n x count matrix.
template <class Scalar>
Var<Scalar> tile_cols(Var<Scalar> v, Index count) {
  if (v.cols() != 1) throw ShapeError("tile_cols: expected a column, got " + shape_of(v.value()));
  Matrix<Scalar> out = v.value().replicate(1, count);
  return v.tape()->push(std::move(out), {v},
                        [v](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(v.id()) += g.rowwise().sum(); },
                        "tile_cols");
}

template <class Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().transpose();
  return a.tape()->push(std::move(out), {a},
                        [a](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(a.id()) += g.transpose(); },
                        "transpose");
}

/// Vertical stacking ("[a; b; ...]"); all parts share the column count.
template <class Scalar>
Var<Scalar> vcat(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("vcat: no inputs");
  Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "vcat");
    if (p.cols() != cols) {
      throw ShapeError("vcat: column mismatch " + shape_of(parts[0].value()) + " vs " + shape_of(p.value()));
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var<Scalar>> saved(parts.begin(), parts.end());
  return parts[0].tape()->push(std::move(out), parts,
                               [saved](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                 Index r0 = 0;
                                 for (const auto& p : saved) {
                                   if (t.needs_grad(p.id())) t.grad(p.id()) += g.middleRows(r0, p.rows());
                                   r0 += p.rows();
                                 }
                               },
                               "vcat");
}

template <class Scalar>
Var<Scalar> vcat(std::initializer_list<Var<Scalar>> parts) {
  return vcat(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

/// Horizontal concatenation; all parts share the row count.
template <class Scalar>
Var<Scalar> hcat(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("hcat: no inputs");
  Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "hcat");
    if (p.rows() != rows) {
      throw ShapeError("hcat: row mismatch " + shape_of(parts[0].value()) + " vs " + shape_of(p.value()));
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var<Scalar>> saved(parts.begin(), parts.end());
  return parts[0].tape()->push(std::move(out), parts,
                               [saved](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                 Index c0 = 0;
                                 for (const auto& p : saved) {
                                   if (t.needs_grad(p.id())) t.grad(p.id()) += g.middleCols(c0, p.cols());
                                   c0 += p.cols();
                                 }
                               },
                               "hcat");
}

template <class Scalar>
Var<Scalar> hcat(std::initializer_list<Var<Scalar>> parts) {
  return hcat(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

template <class Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_of(a.value()));
  }
  Matrix<Scalar> out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), {a},
                        [a, start, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).middleRows(start, count) += g;
                        },
                        "slice_rows");
}

template <class Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_of(a.value()));
  }
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return a.tape()->push(std::move(out), {a},
                        [a, start, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).middleCols(start, count) += g;
                        },
                        "slice_cols");
}

template <class Scalar>
Var<Scalar> col(Var<Scalar> a, Index j) {
  return slice_cols(a, j, 1);
}

// ---------------------------------------------------------------------------
// Reductions

template <class Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, a.value().sum());
  return a.tape()->push(std::move(out), {a},
                        [a](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(a.id()).array() += g(0, 0); },
                        "sum");
}

/// Mean over the columns of an n x T matrix (the time / token axis) -> n x 1.
template <class Scalar>
Var<Scalar> mean_cols(Var<Scalar> a) {
  if (a.cols() == 0) throw ShapeError("mean_cols: empty input " + shape_of(a.value()));
  Matrix<Scalar> out = a.value().rowwise().mean();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.cols());
  return a.tape()->push(std::move(out), {a},
                        [a, inv](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).colwise() += inv * g.col(0);
                        },
                        "mean_cols");
}

/// Max over time: per-row maximum over the columns of an n x T matrix -> n x 1.
/// Ties route the gradient to the earliest column.
template <class Scalar>
Var<Scalar> max_cols(Var<Scalar> a) {
  if (a.cols() == 0) throw ShapeError("max_cols: empty input " + shape_of(a.value()));
  const Index n = a.rows();
  Matrix<Scalar> out(n, 1);
  std::vector<Index> arg(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < a.cols(); ++j) {
      if (a.value()(i, j) > a.value()(i, best)) best = j;
    }
    arg[static_cast<std::size_t>(i)] = best;
    out(i, 0) = a.value()(i, best);
  }
  return a.tape()->push(std::move(out), {a},
                        [a, arg](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          auto& ga = t.grad(a.id());
                          for (std::size_t i = 0; i < arg.size(); ++i) {
                            ga(static_cast<Index>(i), arg[i]) += g(static_cast<Index>(i), 0);
                          }
                        },
                        "max_cols");
}

/// Element `i` of a vector -> 1x1.
template <class Scalar>
Var<Scalar> pick(Var<Scalar> v, Index i) {
  detail::require_vector(v, "pick");
  if (i < 0 || i >= v.size()) {
    throw ShapeError("pick: index " + std::to_string(i) + " out of range for " + shape_of(v.value()));
  }
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, v.value().data()[i]);
  return v.tape()->push(std::move(out), {v},
                        [v, i](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(v.id()).data()[i] += g(0, 0); },
                        "pick");
}

/// Sums consecutive segments of a vector; output keeps the input orientation.
template <class Scalar>
Var<Scalar> segment_sum(Var<Scalar> v, std::vector<Index> sizes) {
  detail::require_vector(v, "segment_sum");
  Index total = 0;
  for (Index s : sizes) {
    if (s <= 0) throw ShapeError("segment_sum: segments must be non-empty");
    total += s;
  }
  if (total != v.size()) throw ShapeError("segment_sum: segment sizes do not cover " + shape_of(v.value()));
  Matrix<Scalar> out = detail::shaped_like(v, static_cast<Index>(sizes.size()));
  Index off = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    Scalar acc = 0;
    for (Index j = 0; j < sizes[k]; ++j) acc += v.value().data()[off + j];
    out.data()[k] = acc;
    off += sizes[k];
  }
  return v.tape()->push(std::move(out), {v},
                        [v, sizes](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          auto& gv = t.grad(v.id());
                          Index o = 0;
                          for (std::size_t k = 0; k < sizes.size(); ++k) {
                            for (Index j = 0; j < sizes[k]; ++j) gv.data()[o + j] += g.data()[k];
                            o += sizes[k];
                          }
                        },
                        "segment_sum");
}

namespace detail {

template <class Scalar, class It>
Scalar logsumexp_of(It begin, It end) {
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (It it = begin; it != end; ++it) m = std::max(m, *it);
  Scalar s = 0;
  for (It it = begin; it != end; ++it) s += std::exp(*it - m);
  return m + std::log(s);
}

}  // namespace detail

/// Log-sum-exp over consecutive segments of a vector.
template <class Scalar>
Var<Scalar> segment_logsumexp(Var<Scalar> v, std::vector<Index> sizes) {
  detail::require_vector(v, "segment_logsumexp");
  Index total = 0;
  for (Index s : sizes) {
    if (s <= 0) throw ShapeError("segment_logsumexp: segments must be non-empty");
    total += s;
  }
  if (total != v.size()) throw ShapeError("segment_logsumexp: segment sizes do not cover " + shape_of(v.value()));
  Matrix<Scalar> out = detail::shaped_like(v, static_cast<Index>(sizes.size()));
  const Scalar* x = v.value().data();
  Index off = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    out.data()[k] = detail::logsumexp_of<Scalar>(x + off, x + off + sizes[k]);
    off += sizes[k];
  }
  Matrix<Scalar> lse = out;
  return v.tape()->push(std::move(out), {v},
                        [v, sizes, lse](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          auto& gv = t.grad(v.id());
                          const Scalar* xv = v.value().data();
                          Index o = 0;
                          for (std::size_t k = 0; k < sizes.size(); ++k) {
                            for (Index j = 0; j < sizes[k]; ++j) {
                              gv.data()[o + j] += g.data()[k] * std::exp(xv[o + j] - lse.data()[k]);
                            }
                            o += sizes[k];
                          }
                        },
                        "segment_logsumexp");
}

/// Log-sum-exp over a subset of vector entries -> 1x1.
template <class Scalar>
Var<Scalar> logsumexp_subset(Var<Scalar> v, std::vector<Index> indices) {
  detail::require_vector(v, "logsumexp_subset");
  if (indices.empty()) throw ShapeError("logsumexp_subset: empty subset");
  std::vector<Scalar> xs;
  xs.reserve(indices.size());
  for (Index i : indices) {
    if (i < 0 || i >= v.size()) throw ShapeError("logsumexp_subset: index out of range");
    xs.push_back(v.value().data()[i]);
  }
  const Scalar lse = detail::logsumexp_of<Scalar>(xs.begin(), xs.end());
  return v.tape()->push(Matrix<Scalar>::Constant(1, 1, lse), {v},
                        [v, indices, lse](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          auto& gv = t.grad(v.id());
                          for (Index i : indices) gv.data()[i] += g(0, 0) * std::exp(v.value().data()[i] - lse);
                        },
                        "logsumexp_subset");
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape()->push(std::move(out), {a},
                        [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).array() += (a.value().array() > Scalar(0)).select(g.array(), Scalar(0));
                        },
                        "relu");
}

template <class Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  Matrix<Scalar> y = out;
  return a.tape()->push(std::move(out), {a},
                        [a, y](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).array() += g.array() * (Scalar(1) - y.array().square());
                        },
                        "tanh");
}

template <class Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Matrix<Scalar> out = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  Matrix<Scalar> s = out;
  return a.tape()->push(std::move(out), {a},
                        [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).array() += g.array() * s.array() * (Scalar(1) - s.array());
                        },
                        "sigmoid");
}

template <class Scalar>
Var<Scalar> log(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().log().matrix();
  return a.tape()->push(std::move(out), {a},
                        [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()).array() += g.array() / a.value().array();
                        },
                        "log");
}

template <class Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().exp().matrix();
  Matrix<Scalar> e = out;
  return a.tape()->push(std::move(out), {a},
                        [a, e](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.grad(a.id()) += g.cwiseProduct(e); },
                        "exp");
}

/// Softmax over all entries of a vector, via the max-shifted exponent.
template <class Scalar>
Var<Scalar> softmax(Var<Scalar> a) {
  detail::require_vector(a, "softmax");
  if (a.size() == 0) throw ShapeError("softmax: empty input");
  const Scalar m = a.value().maxCoeff();
  Matrix<Scalar> out = (a.value().array() - m).exp().matrix();
  out /= out.sum();
  Matrix<Scalar> y = out;
  return a.tape()->push(std::move(out), {a},
                        [a, y](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          const Scalar dot = g.cwiseProduct(y).sum();
                          t.grad(a.id()).array() += y.array() * (g.array() - dot);
                        },
                        "softmax");
}

template <class Scalar>
Var<Scalar> log_softmax(Var<Scalar> a) {
  detail::require_vector(a, "log_softmax");
  if (a.size() == 0) throw ShapeError("log_softmax: empty input");
  const Scalar* x = a.value().data();
  const Scalar lse = detail::logsumexp_of<Scalar>(x, x + a.size());
  Matrix<Scalar> out = (a.value().array() - lse).matrix();
  Matrix<Scalar> y = out.array().exp().matrix();
  return a.tape()->push(std::move(out), {a},
                        [a, y](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          t.grad(a.id()) += g - y * g.sum();
                        },
                        "log_softmax");
}

/// sum_t log softmax(logits[:, t])[targets[t]] for V x T logits -> 1x1.
template <class Scalar>
Var<Scalar> column_log_likelihood(Var<Scalar> logits, std::span<const int> targets) {
  if (logits.cols() != static_cast<Index>(targets.size())) {
    throw ShapeError("column_log_likelihood: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_of(logits.value()));
  }
  const auto& z = logits.value();
  Matrix<Scalar> probs(z.rows(), z.cols());
  Scalar total = 0;
  for (Index t = 0; t < z.cols(); ++t) {
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= z.rows()) throw ShapeError("column_log_likelihood: target id out of range");
    const Scalar m = z.col(t).maxCoeff();
    probs.col(t) = (z.col(t).array() - m).exp().matrix();
    const Scalar s = probs.col(t).sum();
    probs.col(t) /= s;
    total += z(y, t) - m - std::log(s);
  }
  std::vector<int> ys(targets.begin(), targets.end());
  return logits.tape()->push(Matrix<Scalar>::Constant(1, 1, total), {logits},
                             [logits, probs, ys](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                               auto& gz = t.grad(logits.id());
                               gz -= g(0, 0) * probs;
                               for (std::size_t k = 0; k < ys.size(); ++k) gz(ys[k], static_cast<Index>(k)) += g(0, 0);
                             },
                             "column_log_likelihood");
}

// ---------------------------------------------------------------------------
// Embeddings, convolution, mixing

/// Embedding lookup: `table` is V x e (one row per token); returns e x T.
template <class Scalar>
Var<Scalar> lookup(Var<Scalar> table, std::span<const int> ids) {
  const auto& E = table.value();
  Matrix<Scalar> out(E.cols(), static_cast<Index>(ids.size()));
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= E.rows()) {
      throw ShapeError("lookup: id " + std::to_string(ids[t]) + " out of range for table " + shape_of(E));
    }
    out.col(static_cast<Index>(t)) = E.row(ids[t]).transpose();
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape()->push(std::move(out), {table},
                            [table, saved](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                              auto& gE = t.grad(table.id());
                              for (std::size_t k = 0; k < saved.size(); ++k) {
                                gE.row(saved[k]) += g.col(static_cast<Index>(k)).transpose();
                              }
                            },
                            "lookup");
}

/// Fused lookup + mean: column n is the mean embedding of `segments[n]`.
template <class Scalar>
Var<Scalar> mean_lookup(Var<Scalar> table, const std::vector<std::vector<int>>& segments) {
  const auto& E = table.value();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(E.cols(), static_cast<Index>(segments.size()));
  for (std::size_t n = 0; n < segments.size(); ++n) {
    if (segments[n].empty()) throw ShapeError("mean_lookup: empty segment " + std::to_string(n));
    for (int id : segments[n]) {
      if (id < 0 || id >= E.rows()) {
        throw ShapeError("mean_lookup: id " + std::to_string(id) + " out of range for table " + shape_of(E));
      }
      out.col(static_cast<Index>(n)) += E.row(id).transpose();
    }
    out.col(static_cast<Index>(n)) /= static_cast<Scalar>(segments[n].size());
  }
  return table.tape()->push(std::move(out), {table},
                            [table, segments](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                              auto& gE = t.grad(table.id());
                              for (std::size_t n = 0; n < segments.size(); ++n) {
                                const Scalar inv = Scalar(1) / static_cast<Scalar>(segments[n].size());
                                for (int id : segments[n]) gE.row(id) += inv * g.col(static_cast<Index>(n)).transpose();
                              }
                            },
                            "mean_lookup");
}

/// Sliding windows of width w over an e x T sequence ("valid" positions):
/// returns (e*w) x (T-w+1), column t stacking columns t..t+w-1.
template <class Scalar>
Var<Scalar> unfold(Var<Scalar> x, Index width) {
  if (width < 1) throw ShapeError("unfold: width must be >= 1");
  if (x.cols() < width) {
    throw ShapeError("unfold: sequence " + shape_of(x.value()) + " shorter than width " + std::to_string(width));
  }
  const Index e = x.rows();
  const Index positions = x.cols() - width + 1;
  Matrix<Scalar> out(e * width, positions);
  for (Index t = 0; t < positions; ++t) {
    for (Index j = 0; j < width; ++j) out.block(j * e, t, e, 1) = x.value().col(t + j);
  }
  return x.tape()->push(std::move(out), {x},
                        [x, width, e, positions](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          auto& gx = t.grad(x.id());
                          for (Index p = 0; p < positions; ++p) {
                            for (Index j = 0; j < width; ++j) gx.col(p + j) += g.block(j * e, p, e, 1);
                          }
                        },
                        "unfold");
}

/// Convex-style mixture sum_l weights[l] * parts[l]; all parts share a shape.
template <class Scalar>
Var<Scalar> mix(std::span<const Var<Scalar>> parts, Var<Scalar> weights) {
  detail::require_vector(weights, "mix");
  if (parts.empty() || static_cast<Index>(parts.size()) != weights.size()) {
    throw ShapeError("mix: " + std::to_string(parts.size()) + " parts for weights " + shape_of(weights.value()));
  }
  for (const auto& p : parts) detail::require_same_shape(parts[0], p, "mix");
  detail::require_same_tape(parts[0], weights, "mix");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(parts[0].rows(), parts[0].cols());
  for (std::size_t l = 0; l < parts.size(); ++l) out += weights.value().data()[l] * parts[l].value();
  std::vector<Var<Scalar>> all(parts.begin(), parts.end());
  all.push_back(weights);
  std::vector<Var<Scalar>> saved(parts.begin(), parts.end());
  return weights.tape()->push(std::move(out), std::span<const Var<Scalar>>(all),
                              [saved, weights](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                const bool wg = t.needs_grad(weights.id());
                                for (std::size_t l = 0; l < saved.size(); ++l) {
                                  const auto& p = saved[l];
                                  if (t.needs_grad(p.id())) t.grad(p.id()) += weights.value().data()[l] * g;
                                  if (wg) t.grad(weights.id()).data()[l] += g.cwiseProduct(p.value()).sum();
                                }
                              },
                              "mix");
}

// ---------------------------------------------------------------------------
// Gated recurrent unit

/// Stacked GRU weights: rows are ordered [update z; reset r; candidate].
///   input  W : 3H x in
///   hidden U : 3H x H
///   bias   b : 3H x 1
template <class Scalar>
struct GruWeights {
  Var<Scalar> input;
  Var<Scalar> hidden;
  Var<Scalar> bias;

  Index hidden_size() const { return hidden.cols(); }
};

/// One GRU step given the already projected input `xp = W x + b` (3H x B):
///   z  = sigmoid(xp_z + U_z h)
///   r  = sigmoid(xp_r + U_r h)
///   h~ = tanh(xp_h + U_h (r . h))
///   h' = (1 - z) . h + z . h~
template <class Scalar>
Var<Scalar> gru_step(Var<Scalar> h, Var<Scalar> xp, Var<Scalar> U) {
  detail::require_same_tape(h, xp, "gru_step");
  detail::require_same_tape(h, U, "gru_step");
  const Index H = h.rows();
  if (U.rows() != 3 * H || U.cols() != H || xp.rows() != 3 * H || xp.cols() != h.cols()) {
    throw ShapeError("gru_step: state " + shape_of(h.value()) + ", projected input " + shape_of(xp.value()) +
                     ", hidden weights " + shape_of(U.value()) + " do not conform");
  }
  ++gru_step_counter;
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto& hv = h.value();
  const auto& Uv = U.value();
  const auto& x = xp.value();
  Matrix<Scalar> zr_lin = x.topRows(2 * H);
  zr_lin.noalias() += Uv.topRows(2 * H) * hv;
  Arr zr = Scalar(1) / (Scalar(1) + (-zr_lin.array()).exp());
  Arr z = zr.topRows(H);
  Arr r = zr.bottomRows(H);
  Matrix<Scalar> rh = (r * hv.array()).matrix();
  Matrix<Scalar> c_lin = x.bottomRows(H);
  c_lin.noalias() += Uv.bottomRows(H) * rh;
  Arr c = c_lin.array().tanh();
  Matrix<Scalar> out = ((Scalar(1) - z) * hv.array() + z * c).matrix();
  if (!h.tape()->recording()) return h.tape()->push(std::move(out), {h, xp, U}, {}, "gru_step");
  return h.tape()->push(
      std::move(out), {h, xp, U},
      [h, xp, U, z, r, c, rh, H](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& hv = h.value();
        const auto& Uv = U.value();
        const Arr ga = g.array();
        Arr dc = ga * z;
        Arr dz = ga * (c - hv.array());
        Matrix<Scalar> dac = (dc * (Scalar(1) - c.square())).matrix();
        Matrix<Scalar> drh = Uv.bottomRows(H).transpose() * dac;
        Arr dr = drh.array() * hv.array();
        Matrix<Scalar> daz = (dz * z * (Scalar(1) - z)).matrix();
        Matrix<Scalar> dar = (dr * r * (Scalar(1) - r)).matrix();
        if (t.needs_grad(xp.id())) {
          auto& gx = t.grad(xp.id());
          gx.topRows(H) += daz;
          gx.middleRows(H, H) += dar;
          gx.bottomRows(H) += dac;
        }
        if (t.needs_grad(U.id())) {
          auto& gU = t.grad(U.id());
          gU.topRows(H).noalias() += daz * hv.transpose();
          gU.middleRows(H, H).noalias() += dar * hv.transpose();
          gU.bottomRows(H).noalias() += dac * rh.transpose();
        }
        if (t.needs_grad(h.id())) {
          auto& gh = t.grad(h.id());
          gh.array() += ga * (Scalar(1) - z) + drh.array() * r;
          gh.noalias() += Uv.topRows(H).transpose() * daz;
          gh.noalias() += Uv.middleRows(H, H).transpose() * dar;
        }
      },
      "gru_step");
}

/// Full GRU cell: h' = GRU(h, x) with input projection included.
template <class Scalar>
Var<Scalar> gru_cell(Var<Scalar> h, Var<Scalar> x, const GruWeights<Scalar>& w) {
  const Index H = w.hidden_size();
  if (w.input.rows() != 3 * H || w.input.cols() != x.rows() || w.bias.rows() != 3 * H || w.bias.cols() != 1 ||
      h.rows() != H) {
    throw ShapeError("gru_cell: state " + shape_of(h.value()) + ", input " + shape_of(x.value()) +
                     ", input weights " + shape_of(w.input.value()) + ", hidden weights " +
                     shape_of(w.hidden.value()) + " do not conform");
  }
  return gru_step(h, add_colwise(matmul(w.input, x), w.bias), w.hidden);
}

// ---------------------------------------------------------------------------
// Operators

template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}
template <class Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  return sub(a, b);
}
template <class Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  return matmul(a, b);
}
template <class Scalar>
Var<Scalar> operator-(Var<Scalar> a) {
  return affine(a, Scalar(-1));
}

}  // namespace c2f::ad
