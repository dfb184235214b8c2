#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "isp/tensor.hpp"

namespace isp {

/// How the raw sample weight is clipped.
enum class AlphaClip : std::uint8_t {
  min1,  // alpha = min(raw, cap): easy samples keep a small weight
  max1,  // alpha = max(raw, 1), the literal reading
  none,
};

std::string to_string(AlphaClip clip);
AlphaClip parse_alpha_clip(const std::string& value);

struct ObjectiveConfig {
  double gamma = 0.3;
  double visual_reg_weight = 1.0;  // omega_v
  double text_reg_weight = 1.0;    // omega_t
  double alpha_cap = 1.0;
  AlphaClip alpha_clip = AlphaClip::min1;
};

/// Difficulty weight from the zero-shot (q) and prompted (p) probabilities
/// of the label class: (2|q - p| / (q + p))^gamma, then clipped. Returns 0
/// when q + p < 1e-12. Throws std::domain_error for inputs outside [0, 1]
/// or non-positive gamma.
double sample_weight(double q, double p, double gamma, double cap = 1.0,
                     AlphaClip clip = AlphaClip::min1);

/// Unweighted regularizers: 1 - cos(x', x) and the class mean of
/// 1 - cos(w'_c, w_c). Each tensor is a differentiable scalar.
std::pair<Tensor, Tensor> regularization(const Tensor& x, const Tensor& x_prime,
                                         const Tensor& w, const Tensor& w_prime);

struct LossBreakdown {
  double ce = 0.0;
  double alpha = 0.0;
  double reg_v = 0.0;
  double reg_t = 0.0;
  double total = 0.0;
  double p_prompted = 0.0;
  double p_zero_shot = 0.0;
  /// Differentiable total, alpha treated as a constant.
  Tensor total_tensor;

  /// (1 + alpha) ce + omega_v reg_v + omega_t reg_t.
  double recompose(const ObjectiveConfig& config) const;
};

/// Weighted cross-entropy plus feature regularization for one sample.
/// `logits` and `p_zero_shot` are [1 x C]; `label` indexes the class set.
/// A given `fixed_alpha` replaces the computed sample weight.
LossBreakdown total_loss(const Tensor& logits, std::size_t label, const Tensor& p_zero_shot,
                         const Tensor& x, const Tensor& x_prime, const Tensor& w,
                         const Tensor& w_prime, const ObjectiveConfig& config,
                         std::optional<double> fixed_alpha = std::nullopt);

}  // namespace isp
