#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isp/csp.hpp"
#include "isp/encoder.hpp"
#include "isp/key_value.hpp"
#include "isp/objective.hpp"
#include "isp/pipeline.hpp"
#include "isp/ssp.hpp"
#include "isp/task.hpp"

namespace isp {

/// Everything a training/evaluation run depends on. Parsed from and written
/// to the flat `key = value` format; unknown keys are rejected.
struct TrainConfig {
  EncoderConfig encoder;
  TaskConfig task;
  PromptConfig prompts;
  ObjectiveConfig objective;
  ForwardOptions forward;

  double lr = 0.025;
  int epochs = 50;
  std::size_t batch_size = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
  KeyValues entries() const;
  std::string to_text() const;
  /// FNV-1a of to_text(), 16 hex digits.
  std::string hash() const;

  static TrainConfig from_text(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);
};

}  // namespace isp
