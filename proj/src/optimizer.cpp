#include "isp/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace isp {

double cosine_annealed_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) throw std::invalid_argument("cosine_annealed_lr: zero total steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw std::invalid_argument("Adam: parameters must be trainable leaves");
    }
    first_moment_.emplace_back(p.size(), 0.0);
    second_moment_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const std::vector<double> g = p.grad();
    auto values = p.mutable_data();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace isp
