#include <gtest/gtest.h>

#include <random>

#include "isp/diagnostics.hpp"
#include "isp/ops.hpp"
#include "isp/pipeline.hpp"
#include "test_util.hpp"

namespace isp {
namespace {

using test::max_abs_diff;
using test::random_matrix;

struct Rig {
  TrainConfig cfg = grad_check_config();
  FrozenEncoder encoder{cfg.encoder};
  PromptSet prompts = init_prompts(cfg.encoder, cfg.prompts, 5);
  Tensor image;

  Rig() {
    std::mt19937_64 rng(9);
    image = random_matrix(rng, cfg.encoder.visual_tokens, cfg.encoder.visual_dim);
  }
};

TEST(LayerRange, ParseAndFormat) {
  LayerRange r = parse_layer_range("3-7");
  EXPECT_EQ(r.first, 3);
  EXPECT_EQ(r.last, 7);
  EXPECT_EQ(r.size(), 5u);
  EXPECT_EQ(to_string(r), "3-7");
  EXPECT_TRUE(parse_layer_range("none").empty());
  EXPECT_EQ(to_string(parse_layer_range("none")), "none");
  EXPECT_THROW(parse_layer_range("7"), ConfigError);
  EXPECT_THROW(parse_layer_range("a-b"), ConfigError);
}

TEST(Pipeline, OutputShapesAndDistribution) {
  Rig rig;
  const auto classes = rig.encoder.all_classes();
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, classes);
  const std::size_t d = rig.cfg.encoder.embed_dim;
  EXPECT_EQ(out.x.shape(), (Shape{1, d}));
  EXPECT_EQ(out.w.shape(), (Shape{classes.size(), d}));
  EXPECT_EQ(out.logits.shape(), (Shape{1, classes.size()}));
  double s = 0.0;
  for (double v : out.p.data()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Pipeline, MaskedPromptsReproduceZeroShot) {
  Rig rig;
  ForwardOptions options;
  options.mask_prompt_keys = true;
  const auto classes = rig.encoder.all_classes();
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, classes, options);
  FrozenFeatures zs = rig.encoder.zero_shot_predict(rig.image, classes);
  EXPECT_LE(max_abs_diff(out.x, zs.x_prime), 1e-10);
  EXPECT_LE(max_abs_diff(out.w, zs.w_prime), 1e-10);
  EXPECT_LE(max_abs_diff(out.p, zs.p_zero_shot), 1e-10);
}

TEST(Pipeline, PromptsChangeThePrediction) {
  Rig rig;
  const auto classes = rig.encoder.all_classes();
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, classes);
  FrozenFeatures zs = rig.encoder.zero_shot_predict(rig.image, classes);
  EXPECT_GT(max_abs_diff(out.x, zs.x_prime), 1e-6);
}

TEST(Pipeline, TraceCoversEveryIspLayer) {
  Rig rig;
  ForwardOptions options;
  options.record_trace = true;
  const auto classes = rig.encoder.all_classes();
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, classes, options);
  ASSERT_EQ(out.trace.size(), rig.cfg.prompts.isp_layers.size());
  for (const LayerTrace& t : out.trace) {
    EXPECT_EQ(t.visual_prompts.shape(), rig.prompts.visual_prompts.shape());
    ASSERT_EQ(t.text_prompts.size(), classes.size());
    ASSERT_EQ(t.affinity.size(), classes.size());
    EXPECT_EQ(t.affinity[0].visual_graph.rows(), rig.cfg.prompts.visual_prompts);
    EXPECT_EQ(t.affinity[0].text_graph.rows(), rig.cfg.prompts.text_prompts);
  }
}

TEST(Pipeline, EmptyRangeLeavesInputPromptsOnly) {
  Rig rig;
  PromptConfig pc = rig.cfg.prompts;
  pc.isp_layers = parse_layer_range("none");
  PromptSet plain = init_prompts(rig.cfg.encoder, pc, 5);
  EXPECT_TRUE(plain.layers.empty());
  EXPECT_EQ(plain.parameter_count(), plain.visual_prompts.size() + plain.text_prompts.size());
  PromptedOutput out = forward(rig.encoder, rig.image, plain, rig.encoder.all_classes());
  EXPECT_EQ(out.p.cols(), rig.encoder.all_classes().size());
}

TEST(Pipeline, GradientReachesEveryParameterBeforeTheLastLayer) {
  // Prompts refined after the final layer never reach the output features.
  Rig rig;
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, rig.encoder.all_classes());
  sum(mul(out.logits, out.logits)).backward();
  const std::string last = "isp" + std::to_string(rig.cfg.encoder.num_layers) + ".";
  for (const auto& [name, t] : rig.prompts.named()) {
    bool any = false;
    for (double g : t.grad()) any = any || g != 0.0;
    EXPECT_EQ(any, name.rfind(last, 0) != 0) << name;
  }
}

TEST(Pipeline, EncoderWeightsReceiveNoGradient) {
  Rig rig;
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, rig.encoder.all_classes());
  sum(out.logits).backward();
  for (const auto& [name, t] : rig.encoder.weights().named()) {
    EXPECT_FALSE(t.requires_grad()) << name;
    EXPECT_FALSE(t.has_grad()) << name;
  }
}

TEST(Pipeline, SubsetOfClasses) {
  Rig rig;
  const std::vector<std::size_t> one{1};
  PromptedOutput out = forward(rig.encoder, rig.image, rig.prompts, one);
  EXPECT_NEAR(out.p.item(), 1.0, 1e-15);
  EXPECT_THROW(forward(rig.encoder, rig.image, rig.prompts, std::vector<std::size_t>{}),
               std::invalid_argument);
}

TEST(PromptSet, InitIsDeterministicPerSeed) {
  Rig rig;
  PromptSet again = init_prompts(rig.cfg.encoder, rig.cfg.prompts, 5);
  PromptSet other = init_prompts(rig.cfg.encoder, rig.cfg.prompts, 6);
  NamedTensors a = rig.prompts.named(), b = again.named(), c = other.named();
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(max_abs_diff(a[i].second, b[i].second), 0.0);
    differs = differs || max_abs_diff(a[i].second, c[i].second) > 0.0;
  }
  EXPECT_TRUE(differs);
}

TEST(PromptSet, ParameterCountMatchesClosedForm) {
  EncoderConfig enc;
  PromptConfig pc;
  const std::size_t dv = enc.visual_dim, dt = enc.text_dim;
  const std::size_t per_layer = 12 * dv * dv + 9 * dv + 12 * dt * dt + 9 * dt +
                                2 * dv * dv + 2 * dt * dt;
  EXPECT_EQ(isp_layer_parameter_count(dv, dt), per_layer);
  PromptSet all = init_prompts(enc, pc, 1);
  pc.isp_layers = LayerRange{10, 12};
  PromptSet tail = init_prompts(enc, pc, 1);
  EXPECT_EQ(all.parameter_count() - tail.parameter_count(), 9 * per_layer);
}

TEST(PromptSet, WeightFileRoundTrip) {
  Rig rig;
  WeightFile file;
  file.blocks = rig.prompts.named();
  PromptSet back = PromptSet::from_weight_file(file, rig.cfg.encoder, rig.cfg.prompts);
  NamedTensors a = rig.prompts.named(), b = back.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(max_abs_diff(a[i].second, b[i].second), 0.0);
    EXPECT_TRUE(b[i].second.requires_grad());
  }
}

}  // namespace
}  // namespace isp
