#pragma once

#include "tsjepa/core.hpp"

namespace tsjepa {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;

  void validate() const {
    require(learning_rate >= 0.0, "OptimizerConfig: learning_rate must be >= 0");
    require(batch_size >= 1, "OptimizerConfig: batch_size must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "OptimizerConfig: betas must lie in [0,1)");
  }
};

/// AdamW with decoupled weight decay and bias-corrected moments:
///   w <- w - lr * wd * w
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
/// Moment buffers are allocated on the first step and bound to the parameter
/// layout seen then.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return step_; }

  void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    require(params.size() == grads.size(), "adamw: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      require(params[i].value->rows() == grads[i].value->rows() && params[i].value->cols() == grads[i].value->cols(),
              "adamw: shape mismatch for " + params[i].name);
      if (!grads[i].value->allFinite()) throw Error("adamw: non-finite gradient in " + grads[i].name);
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
        v_.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
      }
    }
    require(m_.size() == params.size(), "adamw: parameter layout changed between steps");
    ++step_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat& w = *params[i].value;
      const Mat& g = *grads[i].value;
      w *= 1.0 - lr * cfg_.weight_decay;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Mat> m_, v_;
  std::size_t step_ = 0;
};

/// Concatenates parameter lists so several containers share one optimizer.
inline std::vector<ParamRef> join(std::vector<ParamRef> a, const std::vector<ParamRef>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace tsjepa
