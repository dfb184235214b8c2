#include "isp/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "isp/key_value.hpp"
#include "isp/ops.hpp"

namespace isp {

std::string to_string(AlphaClip clip) {
  switch (clip) {
    case AlphaClip::min1: return "min1";
    case AlphaClip::max1: return "max1";
    case AlphaClip::none: return "none";
  }
  return "min1";
}

AlphaClip parse_alpha_clip(const std::string& value) {
  if (value == "min1") return AlphaClip::min1;
  if (value == "max1") return AlphaClip::max1;
  if (value == "none") return AlphaClip::none;
  throw ConfigError("alpha_clip: expected min1, max1 or none, got `" + value + "`");
}

double sample_weight(double q, double p, double gamma, double cap, AlphaClip clip) {
  if (!(q >= 0.0 && q <= 1.0) || !(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("sample_weight: probabilities must lie in [0, 1]");
  }
  if (!(gamma > 0.0)) throw std::domain_error("sample_weight: gamma must be positive");
  if (q + p < 1e-12) return 0.0;
  const double raw = std::pow(2.0 * std::abs(q - p) / (q + p), gamma);
  switch (clip) {
    case AlphaClip::min1: return std::min(raw, cap);
    case AlphaClip::max1: return std::max(raw, 1.0);
    case AlphaClip::none: return raw;
  }
  return raw;
}

std::pair<Tensor, Tensor> regularization(const Tensor& x, const Tensor& x_prime,
                                         const Tensor& w, const Tensor& w_prime) {
  Tensor one = Tensor::scalar(1.0);
  Tensor reg_v = sub(one, sum(paired_cosine(x, x_prime)));
  Tensor reg_t = sub(one, mean(paired_cosine(w, w_prime)));
  return {reg_v, reg_t};
}

double LossBreakdown::recompose(const ObjectiveConfig& config) const {
  return (1.0 + alpha) * ce + config.visual_reg_weight * reg_v + config.text_reg_weight * reg_t;
}

LossBreakdown total_loss(const Tensor& logits, std::size_t label, const Tensor& p_zero_shot,
                         const Tensor& x, const Tensor& x_prime, const Tensor& w,
                         const Tensor& w_prime, const ObjectiveConfig& config,
                         std::optional<double> fixed_alpha) {
  if (label >= logits.size()) {
    throw std::out_of_range("total_loss: label " + std::to_string(label) + " outside " +
                            std::to_string(logits.size()) + " classes");
  }
  if (p_zero_shot.size() != logits.size()) {
    throw DimensionError("total_loss: zero-shot probabilities " +
                         shape_string(p_zero_shot.shape()) + " do not match logits " +
                         shape_string(logits.shape()));
  }
  if (x.rows() != 1) {
    throw DimensionError("total_loss: image feature must be a single row, got " +
                         shape_string(x.shape()));
  }
  Tensor log_p = log_softmax_rows(logits);
  Tensor ce = scale(pick(log_p, label), -1.0);

  LossBreakdown out;
  out.ce = ce.item();
  out.p_prompted = std::clamp(std::exp(log_p[label]), 0.0, 1.0);
  out.p_zero_shot = std::clamp(p_zero_shot[label], 0.0, 1.0);
  out.alpha = fixed_alpha ? *fixed_alpha
                          : sample_weight(out.p_zero_shot, out.p_prompted, config.gamma,
                                          config.alpha_cap, config.alpha_clip);

  auto [reg_v, reg_t] = regularization(x, x_prime, w, w_prime);
  out.reg_v = reg_v.item();
  out.reg_t = reg_t.item();
  out.total_tensor = add(add(scale(ce, 1.0 + out.alpha), scale(reg_v, config.visual_reg_weight)),
                         scale(reg_t, config.text_reg_weight));
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace isp
