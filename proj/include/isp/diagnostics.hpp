#pragma once

#include <string>
#include <vector>

#include "isp/encoder.hpp"
#include "isp/grad_check.hpp"
#include "isp/train_config.hpp"

namespace isp {

inline constexpr double kGradCheckTolerance = 1e-4;

/// Small configuration used by the gradient checks: 2 layers, 2 classes,
/// visual width 8, text width 4, and a larger init scale so gradients are
/// well above finite-difference noise.
TrainConfig grad_check_config();

/// Names accepted by run_grad_checks, in execution order.
std::vector<std::string> grad_check_names();

/// Runs the named check, or all of them for an empty name. Throws
/// std::invalid_argument for an unknown name.
std::vector<GradReport> run_grad_checks(const std::string& name = "");

}  // namespace isp
