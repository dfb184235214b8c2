#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "isp/encoder.hpp"
#include "isp/tensor.hpp"

namespace isp {

struct TaskConfig {
  std::size_t num_classes = 10;
  std::size_t shots = 16;
  std::size_t test_per_class = 20;
  double noise_scale = 2.0;
  /// Weight of the prototype-aligned direction in each class's text target,
  /// versus an independent random direction. 1 makes zero-shot most informative.
  double text_alignment = 1.0;
  /// Correlation between the patch rows of a prototype: each row is
  /// sqrt(r) u_c + sqrt(1 - r) g with a shared class vector u_c, so rows stay
  /// standard normal marginally.
  double patch_coherence = 0.5;
  /// Strength g of the fixed random map (1 - g) I + g G / sqrt(d) applied to
  /// the image direction before it becomes a text target. Shared by all
  /// classes, so it is a discrepancy prompts can learn to undo.
  double text_map = 0.6;
  std::uint64_t seed = 0;
};

struct Sample {
  std::size_t id = 0;
  std::size_t label = 0;  // global class id
  Tensor image;           // [M x d_v] patch embeddings
};

/// Synthetic base-to-new few-shot classification task.
struct FewShotTask {
  std::size_t num_classes = 0;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> base_classes;  // first half of the ids
  std::vector<std::size_t> new_classes;   // second half
  Tensor prototypes;                      // [C*M x d_v], class c at rows [c*M, (c+1)*M)
  Tensor class_embeddings;                // [C x d_t], class-name rows for the text encoder
  std::vector<Sample> train;              // base classes only, `shots` per class
  std::vector<Sample> base_test;
  std::vector<Sample> new_test;

  /// Every tensor and label, in a fixed order (determinism checks).
  std::string bytes() const;
};

/// Builds a task whose zero-shot branch is informative: each class's text row
/// is solved so that its frozen text feature points along a blend of the
/// frozen image feature of the class prototype and a random direction.
/// Deterministic per config.
FewShotTask generate_task(const FrozenEncoder& encoder, const TaskConfig& config);

/// Position of a global class id within a class list.
std::size_t class_index(const std::vector<std::size_t>& classes, std::size_t label);

}  // namespace isp
