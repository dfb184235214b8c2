#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "isp/checkpoint.hpp"
#include "isp/encoder.hpp"
#include "isp/tensor.hpp"

namespace isp::ssp {

/// What the attention output is added to before the MLP.
enum class Residual : std::uint8_t {
  tokens,   // the selected tokens (as written in the method's equations)
  prompts,  // the incoming prompts (conventional pre-norm residual)
  none,     // test rig: attention output alone
};

std::string to_string(Residual residual);
Residual parse_residual(const std::string& value);

inline constexpr std::size_t kMlpRatio = 4;

/// Learnable parameters of one self-structural block for one modality.
struct Params {
  Tensor wq, wk, wv, wo;          // [dim x dim], no bias
  Tensor ln_attn_gain, ln_attn_bias;  // shared by the prompt and token inputs
  Tensor ln_mlp_gain, ln_mlp_bias;
  Tensor w1, b1, w2, b2;          // dim -> 4 dim -> dim

  static Params init(std::size_t dim, double std, std::mt19937_64& rng);
  /// Number of scalars in a block of this width: 12 dim^2 + 9 dim.
  static std::size_t count(std::size_t dim);
  std::size_t dim() const { return wq.rows(); }
  void append_named(NamedTensors& out, const std::string& prefix) const;
  static Params from_named(const WeightFile& file, const std::string& prefix);
};

/// Top-k content rows by channel-wise sum of squares; class token and prompt
/// rows are never candidates.
Tensor select_tokens(const TokenSequence& seq, std::size_t k);

/// Single-head scaled dot-product cross attention of LN(prompts) over
/// LN(selected), including the output projection. Rows of the attention
/// matrix are written to `weights_out` when non-null.
Tensor cross_attend(const Tensor& prompts, const Tensor& selected, const Params& params,
                    Tensor* weights_out = nullptr);

/// A = cross_attend(P, x) + residual; returns MLP(LN(A)) + A.
Tensor refine_prompts(const Tensor& prompts, const Tensor& selected, const Params& params,
                      Residual residual = Residual::tokens);

}  // namespace isp::ssp
