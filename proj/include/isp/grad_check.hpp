#pragma once

#include <functional>
#include <string>
#include <vector>

#include "isp/tensor.hpp"

namespace isp {

struct GradReport {
  std::string op_name;
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_err = 0.0;
};

inline constexpr double kGradCheckStep = 1e-5;

/// max over entries of |a - n| / max(|a|, |n|, 1e-8).
double max_relative_error(const std::vector<double>& analytic,
                          const std::vector<double>& numeric);

/// Compares the reverse-mode gradient of a scalar function of x against
/// central differences with step h.
GradReport grad_check(const std::string& op_name,
                      const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double step = kGradCheckStep);

/// Multi-parameter variant: `f` closes over the leaves in `params` and is
/// re-evaluated while each entry is perturbed in place. Reported arrays are
/// the concatenation of all parameters in the given order.
GradReport grad_check(const std::string& op_name, const std::function<Tensor()>& f,
                      std::vector<Tensor> params, double step = kGradCheckStep);

}  // namespace isp
