#pragma once

#include "affclip/layers.hpp"
#include "affclip/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace affclip {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double grad_clip = 0.0;     // global L2 norm, 0 disables
};

template <typename Scalar>
class Adam {
 public:
  Adam(const AdamConfig& cfg, std::vector<ParameterRef<Scalar>> params) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.push_back(RowMatrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(RowMatrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  /// Applies one update with the gradients currently stored in the parameters.
  /// Returns the global gradient norm before clipping.
  double step(double learning_rate) {
    double sq = 0.0;
    for (const auto& p : params_) sq += p.grad.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const RowMatrix<Scalar> g = p.grad * static_cast<Scalar>(clip);
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      const auto step_size = static_cast<Scalar>(learning_rate / c1);
      const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(c2));
      if (cfg_.weight_decay > 0.0) p.value *= static_cast<Scalar>(1.0 - learning_rate * cfg_.weight_decay);
      p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * denom_scale + static_cast<Scalar>(cfg_.eps));
    }
    return norm;
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const std::vector<ParameterRef<Scalar>>& parameters() const { return params_; }
  std::vector<RowMatrix<Scalar>>& first_moments() { return m_; }
  std::vector<RowMatrix<Scalar>>& second_moments() { return v_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ParameterRef<Scalar>> params_;
  std::vector<RowMatrix<Scalar>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace affclip
