#pragma once

#include <cstdint>
#include <vector>

#include "homsurro/ndcore/tensor.hpp"

namespace homsurro::pipeline {

using ndcore::Tensor;

/// Warmup learning rate: d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
/// Linear increase up to `warmup_steps`, inverse-sqrt decay after; the two
/// branches meet at the warmup step.
double lr_schedule(std::size_t step, std::size_t d_model,
                   std::size_t warmup_steps);

/// Global-norm gradient clipping; returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed set of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig cfg = {});

  void step(const std::vector<Tensor>& grads, double lr);

  std::size_t steps() const { return t_; }

  // state access for exact-resume serialization
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
  AdamConfig cfg_;
};

}  // namespace homsurro::pipeline
