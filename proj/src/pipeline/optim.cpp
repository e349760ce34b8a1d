#include "homsurro/pipeline/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace homsurro::pipeline {

double lr_schedule(std::size_t step, std::size_t d_model,
                   std::size_t warmup_steps) {
  if (step < 1 || d_model < 1 || warmup_steps < 1)
    throw std::invalid_argument("lr_schedule requires positive arguments");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor& g : grads)
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= f;
  }
  return norm;
}

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void Adam::step(const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("adam: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& param = *params_[p];
    const Tensor& g = grads[p];
    if (!param.same_shape(g))
      throw std::invalid_argument("adam: gradient shape mismatch");
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < param.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      param[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

}  // namespace homsurro::pipeline
