#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isp/checkpoint.hpp"
#include "isp/key_value.hpp"
#include "isp/tensor.hpp"

namespace isp {

enum class Role : std::uint8_t { class_token, content, prompt };
enum class Modality : std::uint8_t { visual, text };

/// How the text feature is read off the final text sequence.
enum class TextPooling : std::uint8_t { last_token, mean };

struct EncoderConfig {
  int num_layers = 12;
  std::size_t visual_dim = 32;
  std::size_t text_dim = 16;
  std::size_t visual_tokens = 16;  // M, patches per image
  std::size_t text_tokens = 8;     // N, rows per class template
  std::size_t num_heads = 4;
  std::size_t embed_dim = 16;      // shared feature space
  std::size_t num_classes = 10;    // size of the class-name vocabulary
  double temperature = 0.07;
  double init_std = 0.02;
  std::uint64_t seed = 0;
  TextPooling text_pooling = TextPooling::last_token;

  /// Throws ConfigError when dimensions are inconsistent.
  void validate() const;
};

KeyValues encoder_config_entries(const EncoderConfig& config);
/// Consumes the encoder keys it recognizes from `entries`; returns the rest.
KeyValues apply_encoder_config(EncoderConfig& config, const KeyValues& entries);

std::string to_string(TextPooling pooling);
TextPooling parse_text_pooling(const std::string& value);

/// Per-layer activations of one image or one class sentence.
struct TokenSequence {
  Tensor tokens;
  std::vector<Role> roles;
  Modality modality = Modality::visual;
  int layer_index = 0;

  std::size_t length() const { return roles.size(); }
  std::size_t prompt_count() const;
  /// First row of the trailing prompt block (== length() when there is none).
  std::size_t prompt_start() const { return length() - prompt_count(); }
  /// Rows [0, prompt_start()).
  Tensor frozen_rows() const;
  /// Content rows only: class token and prompts excluded.
  Tensor content_rows() const;
  Tensor prompt_rows() const;
  /// Replaces (or appends) the trailing prompt block.
  TokenSequence with_prompts(const Tensor& prompts) const;
};

struct BlockWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct EncoderWeights {
  Tensor class_token;          // [1 x d_v]
  Tensor visual_positional;    // [(M+1) x d_v]
  Tensor text_template;        // [N x d_t]
  Tensor class_embeddings;     // [C x d_t], one row per class name
  std::vector<BlockWeights> visual_blocks;
  std::vector<BlockWeights> text_blocks;
  Tensor visual_proj, visual_proj_bias;  // [d_v x d], [d]
  Tensor text_proj, text_proj_bias;      // [d_t x d], [d]

  /// Fixed serialization order.
  NamedTensors named() const;
  static EncoderWeights from_named(const EncoderConfig& config, const WeightFile& file);
  /// Independent storage with identical values.
  EncoderWeights clone() const;
};

/// Zero-shot (prompt-free) outputs for one image.
struct FrozenFeatures {
  Tensor x_prime;      // [1 x d]
  Tensor w_prime;      // [C x d]
  Tensor p_zero_shot;  // [1 x C]
};

struct LayerOptions {
  /// Test rig: prompt rows are excluded from the attention keys and values.
  bool mask_prompt_keys = false;
};

/// Cosine logits divided by temperature, [1 x C].
Tensor cosine_logits(const Tensor& x, const Tensor& w, double temperature);

/// A deterministic, randomly initialized dual transformer encoder whose
/// weights never receive updates.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(EncoderConfig config);
  FrozenEncoder(EncoderConfig config, EncoderWeights weights);

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }

  /// Copy sharing all weights except the class-name vocabulary.
  FrozenEncoder with_class_embeddings(const Tensor& rows) const;

  TokenSequence embed_image(const Tensor& patches) const;
  TokenSequence embed_text(std::size_t class_id) const;
  /// One pre-norm transformer block (layer in [1, L]).
  TokenSequence encode_layer(const TokenSequence& seq, int layer,
                             const LayerOptions& options = {}) const;
  /// Final feature [1 x d] of a sequence that has passed all L layers.
  Tensor project_features(const TokenSequence& seq) const;

  /// Frozen image feature x' [1 x d] (no prompts).
  Tensor image_features(const Tensor& image) const;
  /// Zero-shot text features for the given classes, [C x d].
  Tensor text_features(std::span<const std::size_t> classes) const;
  FrozenFeatures zero_shot_predict(const Tensor& image,
                                   std::span<const std::size_t> classes) const;
  FrozenFeatures zero_shot_predict(const Tensor& image) const;
  /// Same as zero_shot_predict with precomputed text features.
  FrozenFeatures zero_shot_predict_with(const Tensor& image, const Tensor& w_prime) const;

  WeightFile to_weight_file() const;
  static FrozenEncoder from_weight_file(const WeightFile& file);
  /// ISPW bytes of the weights (for immutability checks).
  std::string weight_bytes() const;

  std::vector<std::size_t> all_classes() const;

 private:
  EncoderConfig config_;
  EncoderWeights weights_;
};

}  // namespace isp
