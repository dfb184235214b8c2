#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "isp/checkpoint.hpp"
#include "isp/tensor.hpp"

namespace isp::csp {

inline constexpr double kDefaultBeta = 10.0;

/// Which text tokens the visual prompts are compared against.
enum class TextContext : std::uint8_t {
  mean_classes,  // one graph from the class-averaged text token matrix
  per_class,     // one graph per class sequence, averaged
};

std::string to_string(TextContext context);
TextContext parse_text_context(const std::string& value);

/// Cross-modal affinities of one layer, and the prompt graphs derived from them.
struct AffinityPair {
  Tensor visual_to_text;  // [L_v x N], cosine
  Tensor text_to_visual;  // [L_t x M'], cosine
  Tensor visual_graph;    // [L_v x L_v]
  Tensor text_graph;      // [L_t x L_t]
  double beta = kDefaultBeta;
};

/// Graph-convolution projections of one layer for one modality.
struct Params {
  Tensor theta1, theta2;  // [dim x dim]

  static Params init(std::size_t dim, double std, std::mt19937_64& rng);
  /// 2 dim^2.
  static std::size_t count(std::size_t dim);
  void append_named(NamedTensors& out, const std::string& prefix) const;
  static Params from_named(const WeightFile& file, const std::string& prefix);
};

/// Per-row orthonormal DCT, keep the first `text_dim` coefficients, inverse
/// transform at length `text_dim`.
Tensor reduce_visual(const Tensor& tokens, std::size_t text_dim);

/// Prompt-prompt graph from the rows of a cross-modal affinity matrix:
/// out[i,j] = exp(-beta ||A_i - A_j||^2).
Tensor prompt_graph(const Tensor& affinity, double beta);

/// Visual half: cosine of channel-reduced visual prompts against text tokens,
/// then the visual prompt graph.
std::pair<Tensor, Tensor> visual_affinity(const Tensor& visual_prompts,
                                          const Tensor& text_tokens, double beta);
/// Text half: cosine of text prompts against reduced visual tokens, then the
/// text prompt graph.
std::pair<Tensor, Tensor> text_affinity(const Tensor& text_prompts,
                                        const Tensor& reduced_visual, double beta);

/// Both halves. `visual_prompts` are at the visual width; they are reduced
/// to the text width before the cosine.
AffinityPair cross_affinities(const Tensor& visual_prompts, const Tensor& text_prompts,
                              const Tensor& text_tokens, const Tensor& reduced_visual,
                              double beta = kDefaultBeta);

/// relu(D^-1/2 A D^-1/2 P theta1) theta2.
Tensor graph_refine(const Tensor& prompts, const Tensor& adjacency, const Params& params);

/// Largest eigenvalue magnitude of a symmetric matrix.
double spectral_radius(const Tensor& symmetric);

}  // namespace isp::csp
