#pragma once

#include <cstddef>
#include <vector>

#include "isp/tensor.hpp"

namespace isp {

/// lr * (1 + cos(pi * step / total)) / 2.
double cosine_annealed_lr(double base_lr, std::size_t step, std::size_t total_steps);

/// Adaptive-moment optimizer over leaf tensors, updated in place from their
/// accumulated gradients.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit Adam(std::vector<Tensor> params) : Adam(std::move(params), Options{}) {}
  Adam(std::vector<Tensor> params, Options options);

  /// One update with the given learning rate, then clears the gradients.
  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_moment_, second_moment_;
  Options options_;
  std::size_t steps_ = 0;
};

}  // namespace isp
