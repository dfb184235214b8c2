#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isp/encoder.hpp"
#include "isp/pipeline.hpp"
#include "isp/task.hpp"
#include "isp/train_config.hpp"

namespace isp {

/// Raised when a training step produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One row of the metrics CSV.
struct EpochMetrics {
  int epoch = 0;
  double mean_ce = 0.0;
  double mean_alpha = 0.0;
  double mean_reg = 0.0;  // omega_v reg_v + omega_t reg_t
  double base_train_acc = 0.0;  // fraction in [0, 1], prompted argmax
};

/// `epoch,mean_ce,mean_alpha,mean_reg,base_train_acc`
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);
std::string metrics_csv(const std::vector<EpochMetrics>& rows);

struct TrainResult {
  PromptSet prompts;
  std::vector<EpochMetrics> epochs;
  std::size_t steps = 0;
};

/// Trains prompts for one seed. `encoder` must already carry the task's
/// class vocabulary. `on_epoch` is called after every epoch.
TrainResult train(const FrozenEncoder& encoder, const FewShotTask& task,
                  const TrainConfig& config, std::uint64_t seed,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// 2 b n / (b + n); 0 when b + n == 0.
double harmonic_mean(double base, double novel);

/// Fraction of samples whose argmax over `classes` is the label. Without
/// prompts the frozen zero-shot branch is scored.
double accuracy(const FrozenEncoder& encoder, const std::vector<Sample>& samples,
                const std::vector<std::size_t>& classes, const PromptSet* prompts,
                const ForwardOptions& options = {});

struct SeedResult {
  std::uint64_t seed = 0;
  double base_acc = 0.0;  // percentages
  double new_acc = 0.0;
  double hm = 0.0;
  double zero_shot_base = 0.0;
  double zero_shot_new = 0.0;
};

struct EvalReport {
  double base_acc = 0.0;
  double new_acc = 0.0;
  double hm = 0.0;
  double zero_shot_base = 0.0;
  double zero_shot_new = 0.0;
  double zero_shot_hm = 0.0;
  std::vector<SeedResult> per_seed;
  std::string config_hash;

  std::string to_text() const;
};

/// Scores one trained prompt set on both test splits.
SeedResult evaluate_seed(const FrozenEncoder& encoder, const FewShotTask& task,
                         const PromptSet& prompts, const TrainConfig& config,
                         std::uint64_t seed);

/// Averages seeds; the report's hm is the harmonic mean of the averaged
/// accuracies.
EvalReport summarize(const std::vector<SeedResult>& seeds, const std::string& config_hash);

struct ProbeRecord {
  std::size_t sample_id = 0;
  std::size_t label = 0;
  double p_prompted = 0.0;
  double p_zero_shot = 0.0;
  double alpha = 0.0;
  double ce = 0.0;
  int bucket = 0;
};

/// Index of alpha among five equal intervals of [0, cap]; alpha == cap is 4.
int alpha_bucket(double alpha, double cap);

/// One record per train sample, in train order.
std::vector<ProbeRecord> probe_dump(const FrozenEncoder& encoder, const FewShotTask& task,
                                    const PromptSet& prompts, const TrainConfig& config);

/// `sample_id,label,p_prompted,p_zero_shot,alpha,ce,bucket`
std::string probe_csv(const std::vector<ProbeRecord>& records);

/// Encoder (with task vocabulary), trained prompts and the run's config.
struct Checkpoint {
  TrainConfig config;
  std::uint64_t seed = 0;
  FrozenEncoder encoder;
  PromptSet prompts;
};

WeightFile checkpoint_weight_file(const Checkpoint& checkpoint);
std::string checkpoint_bytes(const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint checkpoint_from_weight_file(const WeightFile& file);

/// Frozen encoder plus task built from the config: the encoder returned
/// already carries the task's class vocabulary.
struct RunSetup {
  FrozenEncoder encoder;
  FewShotTask task;
};
RunSetup build_run(const TrainConfig& config);

}  // namespace isp
