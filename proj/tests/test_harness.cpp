#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

#include "isp/diagnostics.hpp"
#include "isp/ops.hpp"
#include "isp/optimizer.hpp"
#include "isp/trainer.hpp"
#include "test_util.hpp"

namespace isp {
namespace {

using test::max_abs_diff;

TrainConfig tiny_config() {
  TrainConfig cfg = grad_check_config();
  cfg.encoder.num_classes = 4;
  cfg.task.num_classes = 4;
  cfg.task.shots = 4;
  cfg.task.test_per_class = 3;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seeds = {1};
  return cfg;
}

// ---- task ----

TEST(Task, SplitsAndCounts) {
  const RunSetup run = build_run(tiny_config());
  const FewShotTask& t = run.task;
  EXPECT_EQ(t.base_classes, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(t.new_classes, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(t.train.size(), 8u);
  EXPECT_EQ(t.base_test.size(), 6u);
  EXPECT_EQ(t.new_test.size(), 6u);
  std::map<std::size_t, int> per_class;
  for (const Sample& s : t.train) {
    ++per_class[s.label];
    EXPECT_LT(s.label, 2u);
  }
  for (const Sample& s : t.base_test) EXPECT_LT(s.label, 2u);
  for (const Sample& s : t.new_test) EXPECT_GE(s.label, 2u);
  EXPECT_EQ(per_class[0], 4);
  EXPECT_EQ(per_class[1], 4);
  // Ids number the samples of each split in order.
  for (const auto* split : {&t.train, &t.base_test, &t.new_test})
    for (std::size_t i = 0; i < split->size(); ++i) EXPECT_EQ((*split)[i].id, i);
}

TEST(Task, ZeroNoiseSamplesEqualTheirPrototype) {
  TrainConfig cfg = tiny_config();
  cfg.task.noise_scale = 0.0;
  const RunSetup run = build_run(cfg);
  const std::size_t m = cfg.encoder.visual_tokens;
  for (const Sample& s : run.task.train) {
    EXPECT_EQ(max_abs_diff(s.image, slice_rows(run.task.prototypes, s.label * m, m)), 0.0);
  }
}

TEST(Task, DeterministicPerSeed) {
  TrainConfig cfg = tiny_config();
  const std::string a = build_run(cfg).task.bytes();
  EXPECT_EQ(a, build_run(cfg).task.bytes());
  cfg.task.seed = 9;
  EXPECT_NE(a, build_run(cfg).task.bytes());
}

TEST(Task, ZeroShotBeatsChanceOnDefaultTask) {
  const TrainConfig cfg;
  const RunSetup run = build_run(cfg);
  const double chance = 100.0 / static_cast<double>(cfg.task.num_classes / 2);
  const double base = 100.0 * accuracy(run.encoder, run.task.base_test, run.task.base_classes, nullptr);
  const double novel = 100.0 * accuracy(run.encoder, run.task.new_test, run.task.new_classes, nullptr);
  EXPECT_GT(base, chance + 10.0);
  EXPECT_GT(novel, chance + 10.0);
}

TEST(Task, InvalidSettings) {
  const FrozenEncoder enc(tiny_config().encoder);
  TaskConfig t = tiny_config().task;
  t.num_classes = 3;
  EXPECT_THROW(generate_task(enc, t), ConfigError);
  t = tiny_config().task;
  t.patch_coherence = 1.0;
  EXPECT_THROW(generate_task(enc, t), ConfigError);
  t = tiny_config().task;
  t.text_alignment = 1.5;
  EXPECT_THROW(generate_task(enc, t), ConfigError);
  t = tiny_config().task;
  t.text_map = -0.1;
  EXPECT_THROW(generate_task(enc, t), ConfigError);
}

TEST(Task, ClassIndex) {
  const std::vector<std::size_t> classes{5, 6, 7};
  EXPECT_EQ(class_index(classes, 6), 1u);
  EXPECT_ANY_THROW(class_index(classes, 4));
}

// ---- config ----

TEST(TrainConfig, TextRoundTripAndHash) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0123;
  cfg.forward.text_context = csp::TextContext::per_class;
  cfg.objective.alpha_clip = AlphaClip::none;
  const TrainConfig back = TrainConfig::from_text(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_EQ(back.hash(), cfg.hash());
  EXPECT_EQ(cfg.hash().size(), 16u);
  cfg.lr = 0.0124;
  EXPECT_NE(back.hash(), cfg.hash());
}

TEST(TrainConfig, DefaultsAndOverrides) {
  const TrainConfig cfg = TrainConfig::from_text("# comment\nlr = 0.5\nseeds = 4, 5\n\n");
  EXPECT_EQ(cfg.lr, 0.5);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(cfg.epochs, TrainConfig{}.epochs);
}

TEST(TrainConfig, Errors) {
  EXPECT_THROW(TrainConfig::from_text("learning_rate = 1\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("lr = fast\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("lr = 1\nlr = 2\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("lr\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("epochs = 0\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("isp_layers = 3-20\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("seeds = 1,,2\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("gamma = 0\n"), ConfigError);
  try {
    TrainConfig::from_text("mystery = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mystery"), std::string::npos);
  }
}

// ---- optimizer ----

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_annealed_lr(0.1, 0, 100), 0.1);
  EXPECT_NEAR(cosine_annealed_lr(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_NEAR(cosine_annealed_lr(0.1, 100, 100), 0.0, 1e-15);
  for (std::size_t s = 1; s <= 100; ++s)
    EXPECT_LE(cosine_annealed_lr(0.1, s, 100), cosine_annealed_lr(0.1, s - 1, 100));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor x = Tensor::vector({1.0, -2.0}, true);
  Adam opt({x});
  sum(mul(x, x)).backward();
  opt.step(0.1);
  EXPECT_NEAR(x[0], 0.9, 1e-7);
  EXPECT_NEAR(x[1], -1.9, 1e-7);
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(Adam, MinimizesAQuadratic) {
  Tensor x = Tensor::vector({3.0, -4.0}, true);
  Adam opt({x});
  for (int i = 0; i < 500; ++i) {
    sum(mul(x, x)).backward();
    opt.step(0.05);
  }
  EXPECT_LT(std::abs(x[0]) + std::abs(x[1]), 1e-2);
}

// ---- training ----

TEST(Train, ZeroLearningRateLeavesPromptsAndMetricsUnchanged) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  const RunSetup run = build_run(cfg);
  TrainResult r = train(run.encoder, run.task, cfg, 1);
  const PromptSet init = init_prompts(cfg.encoder, cfg.prompts, 1);
  NamedTensors a = r.prompts.named(), b = init.named();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(max_abs_diff(a[i].second, b[i].second), 0.0);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs[0].mean_ce, r.epochs[1].mean_ce);
  EXPECT_EQ(r.epochs[0].mean_alpha, r.epochs[1].mean_alpha);
  EXPECT_EQ(r.steps, 4u);
}

TEST(Train, CallbackSeesEveryEpoch) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  std::vector<int> seen;
  TrainResult r = train(run.encoder, run.task, cfg, 1, [&](const EpochMetrics& m) { seen.push_back(m.epoch); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2}));
  for (const EpochMetrics& m : r.epochs) {
    EXPECT_GE(m.base_train_acc, 0.0);
    EXPECT_LE(m.base_train_acc, 1.0);
    EXPECT_GE(m.mean_alpha, 0.0);
    EXPECT_LE(m.mean_alpha, cfg.objective.alpha_cap);
  }
}

TEST(Train, DivergenceRaisesTrainingError) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e300;
  const RunSetup run = build_run(cfg);
  try {
    train(run.encoder, run.task, cfg, 1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, MetricsCsvFormat) {
  EXPECT_EQ(metrics_csv_header(), "epoch,mean_ce,mean_alpha,mean_reg,base_train_acc");
  EXPECT_EQ(metrics_csv_row(EpochMetrics{3, 0.5, 0.25, 0.125, 1.0}), "3,0.5,0.25,0.125,1");
  const std::string csv = metrics_csv({EpochMetrics{1, 1, 0, 0, 0}});
  EXPECT_EQ(csv, metrics_csv_header() + "\n1,1,0,0,0\n");
}

// ---- evaluation ----

TEST(HarmonicMean, Examples) {
  EXPECT_DOUBLE_EQ(harmonic_mean(50.0, 50.0), 50.0);
  EXPECT_DOUBLE_EQ(harmonic_mean(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(harmonic_mean(100.0, 0.0), 0.0);
  EXPECT_NEAR(harmonic_mean(82.69, 63.22), 71.66, 0.005);
  EXPECT_NEAR(harmonic_mean(69.34, 74.22), 71.70, 0.005);
}

TEST(Summarize, AveragesThenTakesTheHarmonicMean) {
  std::vector<SeedResult> seeds{{1, 80, 60, harmonic_mean(80, 60), 70, 65},
                                {2, 60, 80, harmonic_mean(60, 80), 72, 67}};
  EvalReport r = summarize(seeds, "abc");
  EXPECT_DOUBLE_EQ(r.base_acc, 70.0);
  EXPECT_DOUBLE_EQ(r.new_acc, 70.0);
  EXPECT_DOUBLE_EQ(r.hm, 70.0);
  EXPECT_DOUBLE_EQ(r.zero_shot_base, 71.0);
  EXPECT_DOUBLE_EQ(r.zero_shot_new, 66.0);
  const std::string text = r.to_text();
  EXPECT_NE(text.find("hm = 70"), std::string::npos);
  EXPECT_NE(text.find("seed2.new_acc = 80"), std::string::npos);
  EXPECT_NE(text.find("config_hash = abc"), std::string::npos);
}

TEST(Evaluate, ZeroShotScoresMatchAccuracy) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  const PromptSet prompts = init_prompts(cfg.encoder, cfg.prompts, 1);
  SeedResult r = evaluate_seed(run.encoder, run.task, prompts, cfg, 1);
  EXPECT_DOUBLE_EQ(r.zero_shot_new,
                   100.0 * accuracy(run.encoder, run.task.new_test, run.task.new_classes, nullptr));
  EXPECT_DOUBLE_EQ(r.hm, harmonic_mean(r.base_acc, r.new_acc));
}

// ---- probing ----

TEST(AlphaBucket, Rules) {
  EXPECT_EQ(alpha_bucket(0.0, 1.0), 0);
  EXPECT_EQ(alpha_bucket(0.19, 1.0), 0);
  EXPECT_EQ(alpha_bucket(0.2, 1.0), 1);
  EXPECT_EQ(alpha_bucket(0.5, 1.0), 2);
  EXPECT_EQ(alpha_bucket(0.99, 1.0), 4);
  EXPECT_EQ(alpha_bucket(1.0, 1.0), 4);
  EXPECT_EQ(alpha_bucket(3.0, 1.0), 4);
  EXPECT_EQ(alpha_bucket(1.0, 2.0), 2);
  EXPECT_THROW(alpha_bucket(0.5, 0.0), std::domain_error);
}

TEST(ProbeDump, OneRecordPerTrainSample) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  const PromptSet prompts = init_prompts(cfg.encoder, cfg.prompts, 1);
  const auto records = probe_dump(run.encoder, run.task, prompts, cfg);
  ASSERT_EQ(records.size(), run.task.train.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ProbeRecord& r = records[i];
    EXPECT_EQ(r.sample_id, run.task.train[i].id);
    EXPECT_EQ(r.alpha, sample_weight(r.p_zero_shot, r.p_prompted, cfg.objective.gamma));
    EXPECT_EQ(r.bucket, alpha_bucket(r.alpha, cfg.objective.alpha_cap));
    EXPECT_NEAR(r.ce, -std::log(r.p_prompted), 1e-12);
  }
  const std::string csv = probe_csv(records);
  EXPECT_EQ(csv.rfind("sample_id,label,p_prompted,p_zero_shot,alpha,ce,bucket\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), records.size() + 1);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTrip) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  const Checkpoint ckpt{cfg, 3, run.encoder, init_prompts(cfg.encoder, cfg.prompts, 3)};
  const auto path = std::filesystem::temp_directory_path() / "isp_test_checkpoint.ispw";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.config.to_text(), cfg.to_text());
  EXPECT_EQ(back.encoder.weight_bytes(), run.encoder.weight_bytes());
  EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(ckpt));
}

TEST(Checkpoint, MissingSeedIsAFormatError) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  WeightFile file =
      checkpoint_weight_file(Checkpoint{cfg, 1, run.encoder, init_prompts(cfg.encoder, cfg.prompts, 1)});
  file.config_text = cfg.to_text();
  EXPECT_THROW(checkpoint_from_weight_file(file), FormatError);
}

TEST(Checkpoint, TruncatedFileIsAFormatError) {
  TrainConfig cfg = tiny_config();
  const RunSetup run = build_run(cfg);
  std::string bytes =
      checkpoint_bytes(Checkpoint{cfg, 1, run.encoder, init_prompts(cfg.encoder, cfg.prompts, 1)});
  std::stringstream in(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_ispw(in), FormatError);
}

// ---- diagnostics ----

TEST(GradCheck, NamedChecksPass) {
  for (const std::string name : {"sym_normalize", "ssp_block", "total_loss"}) {
    for (const GradReport& r : run_grad_checks(name)) EXPECT_LE(r.max_rel_err, kGradCheckTolerance) << name;
  }
  EXPECT_THROW(run_grad_checks("nope"), std::invalid_argument);
  EXPECT_GE(grad_check_names().size(), 10u);
}

}  // namespace
}  // namespace isp
