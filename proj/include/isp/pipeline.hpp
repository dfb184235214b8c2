#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isp/checkpoint.hpp"
#include "isp/csp.hpp"
#include "isp/encoder.hpp"
#include "isp/ssp.hpp"
#include "isp/tensor.hpp"

namespace isp {

/// Inclusive range of encoder layers; first > last means empty.
struct LayerRange {
  int first = 1;
  int last = 12;

  bool empty() const { return first > last; }
  bool contains(int layer) const { return layer >= first && layer <= last; }
  std::size_t size() const { return empty() ? 0 : static_cast<std::size_t>(last - first + 1); }
};

std::string to_string(LayerRange range);
/// "a-b" (inclusive) or "none".
LayerRange parse_layer_range(const std::string& value);

struct PromptConfig {
  std::size_t visual_prompts = 4;  // L_v
  std::size_t text_prompts = 6;    // L_t
  LayerRange isp_layers{1, 12};
  double init_std = 0.02;
};

/// Self- and cross-structural parameters of one encoder layer.
struct IspLayer {
  int layer = 0;
  ssp::Params ssp_visual, ssp_text;
  csp::Params csp_visual, csp_text;
};

/// Every trainable quantity: the input prompts plus per-layer ISP blocks.
struct PromptSet {
  Tensor visual_prompts;  // [L_v x d_v]
  Tensor text_prompts;    // [L_t x d_t]
  LayerRange isp_layers;
  std::vector<IspLayer> layers;  // ascending layer order

  const IspLayer* find_layer(int layer) const;
  /// Fixed order used for the optimizer and for checkpoints.
  NamedTensors named() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  static PromptSet from_weight_file(const WeightFile& file, const EncoderConfig& encoder,
                                    const PromptConfig& config);
};

/// Scalars in one layer's ISP block (both modalities, SSP + CSP).
std::size_t isp_layer_parameter_count(std::size_t visual_dim, std::size_t text_dim);

/// Gaussian prompts and ISP blocks; deterministic per seed.
PromptSet init_prompts(const EncoderConfig& encoder, const PromptConfig& config,
                       std::uint64_t seed);

struct ForwardOptions {
  ssp::Residual ssp_residual = ssp::Residual::tokens;
  csp::TextContext text_context = csp::TextContext::mean_classes;
  double beta = csp::kDefaultBeta;
  bool record_trace = false;
  /// Test rig forwarded to every frozen layer.
  bool mask_prompt_keys = false;
};

struct LayerTrace {
  int layer = 0;
  Tensor visual_prompts;                    // refined, as re-inserted
  std::vector<Tensor> text_prompts;         // per class
  std::vector<csp::AffinityPair> affinity;  // per class
};

struct PromptedOutput {
  Tensor x;       // [1 x d]
  Tensor w;       // [C x d]
  Tensor logits;  // [1 x C]
  Tensor p;       // [1 x C]
  std::vector<LayerTrace> trace;
};

/// Prompted forward pass of one image against the given classes.
PromptedOutput forward(const FrozenEncoder& encoder, const Tensor& image,
                       const PromptSet& prompts, std::span<const std::size_t> classes,
                       const ForwardOptions& options = {});

}  // namespace isp
