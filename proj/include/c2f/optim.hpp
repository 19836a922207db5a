#pragma once

#include "c2f/tensor.hpp"

#include <cmath>
#include <vector>

namespace c2f::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
};

struct StepResult {
  double grad_norm = 0;     // global norm before clipping
  double applied_norm = 0;  // global norm of the gradient actually used
  bool skipped = false;     // non-finite gradient; parameters untouched
};

/// Adam with global-norm gradient clipping. Moment buffers are aligned with
/// the ParameterSet order, so a state must stay with one set.
template <class Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.learning_rate > 0) || !(cfg_.clip_norm > 0)) {
      throw std::invalid_argument("Adam: learning rate and clip norm must be positive");
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  StepResult step(ParameterSet<Scalar>& params) {
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Matrix<Scalar>::Zero(params[i].value.rows(), params[i].value.cols()));
        v_.push_back(Matrix<Scalar>::Zero(params[i].value.rows(), params[i].value.cols()));
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("Adam: parameter set changed size");

    StepResult res;
    res.grad_norm = static_cast<double>(params.grad_norm());
    if (!std::isfinite(res.grad_norm)) {
      res.skipped = true;
      return res;
    }
    const double factor = res.grad_norm > cfg_.clip_norm ? cfg_.clip_norm / res.grad_norm : 1.0;
    res.applied_norm = res.grad_norm * factor;

    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const Scalar lr = static_cast<Scalar>(cfg_.learning_rate);
    const Scalar eps = static_cast<Scalar>(cfg_.epsilon);
    const Scalar f = static_cast<Scalar>(factor);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto g = (f * p.grad.array()).eval();
      m_[i].array() = b1 * m_[i].array() + (Scalar(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (Scalar(1) - b2) * g.square();
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
    return res;
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
};

/// Rescales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class Scalar>
Scalar clip_global_norm(ParameterSet<Scalar>& params, Scalar max_norm) {
  const Scalar norm = params.grad_norm();
  if (norm > max_norm) {
    const Scalar f = max_norm / norm;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].grad *= f;
  }
  return norm;
}

}  // namespace c2f::ad
