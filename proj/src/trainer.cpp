#include "isp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "isp/checkpoint.hpp"
#include "isp/key_value.hpp"
#include "isp/objective.hpp"
#include "isp/ops.hpp"
#include "isp/optimizer.hpp"

namespace isp {

namespace {

constexpr const char* kRunSeedKey = "run_seed";
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t argmax(const Tensor& row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

// Fisher-Yates with a plain modulus so the permutation does not depend on
// the standard library's distribution implementations.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

double mean_of(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return values.empty() ? 0.0 : total / static_cast<double>(values.size());
}

}  // namespace

std::string metrics_csv_header() { return "epoch,mean_ce,mean_alpha,mean_reg,base_train_acc"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + g17(m.mean_ce) + "," + g17(m.mean_alpha) + "," +
         g17(m.mean_reg) + "," + g17(m.base_train_acc);
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const EpochMetrics& m : rows) out += metrics_csv_row(m) + "\n";
  return out;
}

TrainResult train(const FrozenEncoder& encoder, const FewShotTask& task,
                  const TrainConfig& config, std::uint64_t seed,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  if (task.train.empty()) throw std::invalid_argument("train: empty train set");
  const std::vector<std::size_t>& classes = task.base_classes;
  const std::size_t n = task.train.size();

  // Frozen branch, computed once.
  Tensor w_prime;
  std::vector<FrozenFeatures> frozen;
  {
    NoGradGuard no_grad;
    w_prime = encoder.text_features(classes);
    frozen.reserve(n);
    for (const Sample& s : task.train) {
      frozen.push_back(encoder.zero_shot_predict_with(s.image, w_prime));
    }
  }

  TrainResult result;
  result.prompts = init_prompts(encoder.config(), config.prompts, seed);
  Adam optimizer(result.prompts.parameters());

  const std::size_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = static_cast<std::size_t>(config.epochs) * batches_per_epoch;
  std::mt19937_64 rng(seed ^ kShuffleStream);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  // Per-sample statistics are stored by position and reduced in train order,
  // so epoch means do not depend on the shuffle.
  std::vector<double> ce(n), alpha(n), reg(n), correct(n);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      const double lr = cosine_annealed_lr(config.lr, result.steps, total_steps);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const Sample& s = task.train[i];
        const std::size_t label = class_index(classes, s.label);
        LossBreakdown loss;
        PromptedOutput out;
        try {
          out = forward(encoder, s.image, result.prompts, classes, config.forward);
          loss = total_loss(out.logits, label, frozen[i].p_zero_shot, out.x, frozen[i].x_prime,
                            out.w, w_prime, config.objective);
        } catch (const NumericError& e) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on sample " +
                              std::to_string(s.id) + ": " + e.what());
        }
        if (!std::isfinite(loss.total)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                              " on sample " + std::to_string(s.id));
        }
        scale(loss.total_tensor, inv_batch).backward();
        ce[i] = loss.ce;
        alpha[i] = loss.alpha;
        reg[i] = config.objective.visual_reg_weight * loss.reg_v +
                 config.objective.text_reg_weight * loss.reg_t;
        correct[i] = argmax(out.logits) == label ? 1.0 : 0.0;
      }
      optimizer.step(lr);
      ++result.steps;
    }
    EpochMetrics m{epoch, mean_of(ce), mean_of(alpha), mean_of(reg), mean_of(correct)};
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

double harmonic_mean(double base, double novel) {
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

double accuracy(const FrozenEncoder& encoder, const std::vector<Sample>& samples,
                const std::vector<std::size_t>& classes, const PromptSet* prompts,
                const ForwardOptions& options) {
  if (samples.empty()) return 0.0;
  NoGradGuard no_grad;
  Tensor w_prime;
  if (!prompts) w_prime = encoder.text_features(classes);
  std::size_t hits = 0;
  for (const Sample& s : samples) {
    const std::size_t label = class_index(classes, s.label);
    const Tensor p = prompts ? forward(encoder, s.image, *prompts, classes, options).p
                             : encoder.zero_shot_predict_with(s.image, w_prime).p_zero_shot;
    if (argmax(p) == label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

SeedResult evaluate_seed(const FrozenEncoder& encoder, const FewShotTask& task,
                         const PromptSet& prompts, const TrainConfig& config,
                         std::uint64_t seed) {
  const EncoderConfig& enc = encoder.config();
  if (prompts.visual_prompts.cols() != enc.visual_dim ||
      prompts.text_prompts.cols() != enc.text_dim) {
    throw DimensionError("evaluate: prompt widths do not match the encoder");
  }
  if (task.num_classes != enc.num_classes) {
    throw DimensionError("evaluate: task has " + std::to_string(task.num_classes) +
                         " classes, encoder vocabulary has " + std::to_string(enc.num_classes));
  }
  SeedResult r;
  r.seed = seed;
  r.base_acc = 100.0 * accuracy(encoder, task.base_test, task.base_classes, &prompts,
                                config.forward);
  r.new_acc = 100.0 * accuracy(encoder, task.new_test, task.new_classes, &prompts,
                               config.forward);
  r.hm = harmonic_mean(r.base_acc, r.new_acc);
  r.zero_shot_base = 100.0 * accuracy(encoder, task.base_test, task.base_classes, nullptr);
  r.zero_shot_new = 100.0 * accuracy(encoder, task.new_test, task.new_classes, nullptr);
  return r;
}

EvalReport summarize(const std::vector<SeedResult>& seeds, const std::string& config_hash) {
  EvalReport report;
  report.per_seed = seeds;
  report.config_hash = config_hash;
  if (seeds.empty()) return report;
  const double k = static_cast<double>(seeds.size());
  for (const SeedResult& s : seeds) {
    report.base_acc += s.base_acc / k;
    report.new_acc += s.new_acc / k;
    report.zero_shot_base += s.zero_shot_base / k;
    report.zero_shot_new += s.zero_shot_new / k;
  }
  report.hm = harmonic_mean(report.base_acc, report.new_acc);
  report.zero_shot_hm = harmonic_mean(report.zero_shot_base, report.zero_shot_new);
  return report;
}

std::string EvalReport::to_text() const {
  KeyValues kv{
      {"config_hash", config_hash},
      {"base_acc", format_double(base_acc)},
      {"new_acc", format_double(new_acc)},
      {"hm", format_double(hm)},
      {"zero_shot_base", format_double(zero_shot_base)},
      {"zero_shot_new", format_double(zero_shot_new)},
      {"zero_shot_hm", format_double(zero_shot_hm)},
  };
  for (const SeedResult& s : per_seed) {
    const std::string p = "seed" + std::to_string(s.seed) + ".";
    kv.emplace_back(p + "base_acc", format_double(s.base_acc));
    kv.emplace_back(p + "new_acc", format_double(s.new_acc));
    kv.emplace_back(p + "hm", format_double(s.hm));
    kv.emplace_back(p + "zero_shot_base", format_double(s.zero_shot_base));
    kv.emplace_back(p + "zero_shot_new", format_double(s.zero_shot_new));
  }
  return format_key_values(kv);
}

int alpha_bucket(double alpha, double cap) {
  if (!(cap > 0.0)) throw std::domain_error("alpha_bucket: cap must be positive");
  if (alpha <= 0.0) return 0;
  if (alpha >= cap) return 4;
  return std::clamp(static_cast<int>(std::floor(alpha / cap * 5.0)), 0, 4);
}

std::vector<ProbeRecord> probe_dump(const FrozenEncoder& encoder, const FewShotTask& task,
                                    const PromptSet& prompts, const TrainConfig& config) {
  NoGradGuard no_grad;
  const std::vector<std::size_t>& classes = task.base_classes;
  const Tensor w_prime = encoder.text_features(classes);
  std::vector<ProbeRecord> records;
  records.reserve(task.train.size());
  for (const Sample& s : task.train) {
    const std::size_t label = class_index(classes, s.label);
    const FrozenFeatures frozen = encoder.zero_shot_predict_with(s.image, w_prime);
    const PromptedOutput out = forward(encoder, s.image, prompts, classes, config.forward);
    const LossBreakdown loss = total_loss(out.logits, label, frozen.p_zero_shot, out.x,
                                          frozen.x_prime, out.w, w_prime, config.objective);
    records.push_back(ProbeRecord{s.id, s.label, loss.p_prompted, loss.p_zero_shot, loss.alpha,
                                  loss.ce, alpha_bucket(loss.alpha, config.objective.alpha_cap)});
  }
  return records;
}

std::string probe_csv(const std::vector<ProbeRecord>& records) {
  std::string out = "sample_id,label,p_prompted,p_zero_shot,alpha,ce,bucket\n";
  for (const ProbeRecord& r : records) {
    out += std::to_string(r.sample_id) + "," + std::to_string(r.label) + "," +
           g17(r.p_prompted) + "," + g17(r.p_zero_shot) + "," + g17(r.alpha) + "," +
           g17(r.ce) + "," + std::to_string(r.bucket) + "\n";
  }
  return out;
}

WeightFile checkpoint_weight_file(const Checkpoint& checkpoint) {
  WeightFile file;
  file.config_text = checkpoint.config.to_text() +
                     format_key_values({{kRunSeedKey, std::to_string(checkpoint.seed)}});
  file.blocks = checkpoint.encoder.weights().named();
  for (auto& block : checkpoint.prompts.named()) file.blocks.push_back(block);
  return file;
}

std::string checkpoint_bytes(const Checkpoint& checkpoint) {
  return ispw_bytes(checkpoint_weight_file(checkpoint));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  save_ispw(path, checkpoint_weight_file(checkpoint));
}

Checkpoint checkpoint_from_weight_file(const WeightFile& file) {
  KeyValues entries = parse_key_values(file.config_text);
  std::uint64_t seed = 0;
  bool has_seed = false;
  KeyValues rest;
  for (auto& [key, value] : entries) {
    if (key == kRunSeedKey) {
      seed = static_cast<std::uint64_t>(parse_int(key, value));
      has_seed = true;
    } else {
      rest.emplace_back(key, value);
    }
  }
  if (!has_seed) throw FormatError("checkpoint: missing `run_seed` in the stored config");
  TrainConfig config = TrainConfig::from_text(format_key_values(rest));
  FrozenEncoder encoder = FrozenEncoder::from_weight_file(file);
  PromptSet prompts = PromptSet::from_weight_file(file, config.encoder, config.prompts);
  return Checkpoint{std::move(config), seed, std::move(encoder), std::move(prompts)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_weight_file(load_ispw(path));
}

RunSetup build_run(const TrainConfig& config) {
  config.validate();
  FrozenEncoder base(config.encoder);
  FewShotTask task = generate_task(base, config.task);
  FrozenEncoder encoder = base.with_class_embeddings(task.class_embeddings);
  return RunSetup{std::move(encoder), std::move(task)};
}

}  // namespace isp
