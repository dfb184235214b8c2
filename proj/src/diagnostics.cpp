#include "isp/diagnostics.hpp"

#include <functional>
#include <random>
#include <stdexcept>
#include <utility>

#include "isp/csp.hpp"
#include "isp/objective.hpp"
#include "isp/ops.hpp"
#include "isp/pipeline.hpp"
#include "isp/ssp.hpp"

namespace isp {

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(std::size_t rows, std::size_t cols, double std = 1.0, bool grad = false) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> data(rows * cols);
    for (double& v : data) v = dist(rng_);
    return Tensor({rows, cols}, std::move(data), grad);
  }

  Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi, bool grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(rows * cols);
    for (double& v : data) v = dist(rng_);
    return Tensor({rows, cols}, std::move(data), grad);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Contracts an output with fixed random weights so every entry matters.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

std::vector<Tensor> ssp_leaves(const ssp::Params& p) {
  return {p.wq, p.wk, p.wv, p.wo, p.ln_attn_gain, p.ln_attn_bias,
          p.ln_mlp_gain, p.ln_mlp_bias, p.w1, p.b1, p.w2, p.b2};
}

ssp::Params perturbed_ssp(std::size_t dim, std::mt19937_64& rng) {
  ssp::Params p = ssp::Params::init(dim, 0.3, rng);
  // Move layer-norm affine terms off their identity initial values.
  std::normal_distribution<double> dist(0.0, 0.2);
  for (Tensor* t : {&p.ln_attn_gain, &p.ln_attn_bias, &p.ln_mlp_gain, &p.ln_mlp_bias,
                    &p.b1, &p.b2}) {
    for (double& v : t->mutable_data()) v += dist(rng);
  }
  return p;
}

using Check = std::pair<std::string, std::function<GradReport()>>;

std::vector<Check> checks() {
  std::vector<Check> out;

  out.emplace_back("matmul", [] {
    Sampler s(11);
    Tensor a = s.normal(3, 4, 1.0, true), b = s.normal(4, 5, 1.0, true);
    Tensor w = s.normal(3, 5);
    return grad_check("matmul", [=] { return probe(matmul(a, b), w); }, {a, b});
  });

  out.emplace_back("softmax_cross_entropy", [] {
    Sampler s(12);
    Tensor logits = s.normal(1, 5, 1.0, true);
    return grad_check("softmax_cross_entropy",
                      [=] { return scale(pick(log_softmax_rows(logits), 2), -1.0); }, {logits});
  });

  out.emplace_back("softmax", [] {
    Sampler s(13);
    Tensor a = s.normal(3, 4, 1.0, true);
    Tensor w = s.normal(3, 4);
    return grad_check("softmax", [=] { return probe(softmax_rows(a), w); }, {a});
  });

  out.emplace_back("layer_norm", [] {
    Sampler s(14);
    Tensor a = s.normal(3, 6, 1.0, true);
    Tensor gain = s.normal(1, 6, 1.0, true), bias = s.normal(1, 6, 1.0, true);
    Tensor w = s.normal(3, 6);
    return grad_check("layer_norm", [=] { return probe(layer_norm(a, gain, bias), w); },
                      {a, gain, bias});
  });

  out.emplace_back("gelu", [] {
    Sampler s(15);
    Tensor a = s.normal(3, 4, 1.0, true);
    Tensor w = s.normal(3, 4);
    return grad_check("gelu", [=] { return probe(gelu(a), w); }, {a});
  });

  out.emplace_back("cosine", [] {
    Sampler s(16);
    Tensor a = s.normal(3, 5, 1.0, true), b = s.normal(4, 5, 1.0, true);
    Tensor w = s.normal(3, 4);
    return grad_check("cosine", [=] { return probe(cosine_rows(a, b), w); }, {a, b});
  });

  out.emplace_back("dct", [] {
    Sampler s(17);
    Tensor a = s.normal(4, 8, 1.0, true);
    Tensor w = s.normal(4, 4);
    return grad_check("dct", [=] { return probe(csp::reduce_visual(a, 4), w); }, {a});
  });

  out.emplace_back("rbf_affinity", [] {
    Sampler s(18);
    Tensor a = s.normal(4, 5, 0.3, true);
    Tensor w = s.normal(4, 4);
    return grad_check("rbf_affinity", [=] { return probe(rbf_row_affinity(a, 10.0), w); }, {a});
  });

  out.emplace_back("sym_normalize", [] {
    Sampler s(19);
    Tensor a = s.uniform(4, 4, 0.2, 1.0, true);
    Tensor w = s.normal(4, 4);
    return grad_check("sym_normalize", [=] { return probe(sym_normalize(a), w); }, {a});
  });

  out.emplace_back("encoder_layer", [] {
    const TrainConfig cfg = grad_check_config();
    const FrozenEncoder encoder(cfg.encoder);
    Sampler s(20);
    Tensor image = s.normal(cfg.encoder.visual_tokens, cfg.encoder.visual_dim, 1.0, true);
    Tensor prompts = s.normal(cfg.prompts.visual_prompts, cfg.encoder.visual_dim, 0.5, true);
    const std::size_t rows = cfg.encoder.visual_tokens + 1 + cfg.prompts.visual_prompts;
    Tensor w = s.normal(rows, cfg.encoder.visual_dim);
    return grad_check(
        "encoder_layer",
        [=, &encoder] {
          return probe(encoder.encode_layer(encoder.embed_image(image).with_prompts(prompts), 1)
                           .tokens,
                       w);
        },
        {image, prompts});
  });

  out.emplace_back("ssp_block", [] {
    Sampler s(21);
    const std::size_t dim = 8;
    ssp::Params params = perturbed_ssp(dim, s.rng());
    Tensor prompts = s.normal(3, dim, 1.0, true), tokens = s.normal(3, dim, 1.0, true);
    Tensor w = s.normal(3, dim);
    std::vector<Tensor> leaves = ssp_leaves(params);
    leaves.push_back(prompts);
    leaves.push_back(tokens);
    return grad_check(
        "ssp_block", [=] { return probe(ssp::refine_prompts(prompts, tokens, params), w); },
        leaves);
  });

  out.emplace_back("csp_graph_refine", [] {
    Sampler s(22);
    const std::size_t dim = 4;
    csp::Params params = csp::Params::init(dim, 0.5, s.rng());
    Tensor prompts = s.normal(3, dim, 1.0, true);
    Tensor text_tokens = s.normal(5, dim, 1.0, true);
    Tensor w = s.normal(3, dim);
    return grad_check(
        "csp_graph_refine",
        [=] {
          auto [cross, graph] = csp::text_affinity(prompts, text_tokens, 1.0);
          return probe(csp::graph_refine(prompts, graph, params), w);
        },
        {params.theta1, params.theta2, prompts, text_tokens});
  });

  auto pipeline_check = [](const std::string& name, ForwardOptions options) {
    return [name, options] {
      const TrainConfig cfg = grad_check_config();
      const FrozenEncoder encoder(cfg.encoder);
      PromptSet prompts = init_prompts(cfg.encoder, cfg.prompts, 23);
      Sampler s(24);
      Tensor image = s.normal(cfg.encoder.visual_tokens, cfg.encoder.visual_dim);
      const std::vector<std::size_t> classes = encoder.all_classes();
      const FrozenFeatures frozen = encoder.zero_shot_predict(image, classes);
      const std::size_t label = 1;
      // The weight is evaluated once and held fixed, as in training.
      const PromptedOutput first = forward(encoder, image, prompts, classes, options);
      const double alpha = total_loss(first.logits, label, frozen.p_zero_shot, first.x,
                                      frozen.x_prime, first.w, frozen.w_prime, cfg.objective)
                               .alpha;
      return grad_check(
          name,
          [&, alpha] {
            const PromptedOutput out = forward(encoder, image, prompts, classes, options);
            return total_loss(out.logits, label, frozen.p_zero_shot, out.x, frozen.x_prime,
                              out.w, frozen.w_prime, cfg.objective, alpha)
                .total_tensor;
          },
          prompts.parameters());
    };
  };
  out.emplace_back("pipeline", pipeline_check("pipeline", ForwardOptions{}));
  {
    ForwardOptions per_class;
    per_class.text_context = csp::TextContext::per_class;
    per_class.ssp_residual = ssp::Residual::prompts;
    out.emplace_back("pipeline_per_class", pipeline_check("pipeline_per_class", per_class));
  }

  out.emplace_back("total_loss", [] {
    Sampler s(25);
    Tensor logits = s.normal(1, 3, 1.0, true);
    Tensor x = s.normal(1, 4, 1.0, true), w = s.normal(3, 4, 1.0, true);
    Tensor x_prime = s.normal(1, 4), w_prime = s.normal(3, 4);
    Tensor p0 = softmax_rows(s.normal(1, 3));
    ObjectiveConfig cfg;
    cfg.visual_reg_weight = 0.7;
    cfg.text_reg_weight = 1.3;
    const double alpha = total_loss(logits, 0, p0, x, x_prime, w, w_prime, cfg).alpha;
    return grad_check(
        "total_loss",
        [=] { return total_loss(logits, 0, p0, x, x_prime, w, w_prime, cfg, alpha).total_tensor; },
        {logits, x, w});
  });

  return out;
}

}  // namespace

TrainConfig grad_check_config() {
  TrainConfig cfg;
  cfg.encoder.num_layers = 2;
  cfg.encoder.visual_dim = 8;
  cfg.encoder.text_dim = 4;
  cfg.encoder.visual_tokens = 6;
  cfg.encoder.text_tokens = 4;
  cfg.encoder.num_heads = 2;
  cfg.encoder.embed_dim = 4;
  cfg.encoder.num_classes = 2;
  cfg.encoder.init_std = 0.3;
  cfg.encoder.temperature = 0.5;
  cfg.encoder.seed = 7;
  cfg.task.num_classes = 2;
  cfg.prompts.visual_prompts = 2;
  cfg.prompts.text_prompts = 3;
  cfg.prompts.isp_layers = LayerRange{1, 2};
  cfg.prompts.init_std = 0.3;
  cfg.forward.beta = 1.0;
  return cfg;
}

std::vector<std::string> grad_check_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : checks()) names.push_back(name);
  return names;
}

std::vector<GradReport> run_grad_checks(const std::string& name) {
  std::vector<GradReport> reports;
  for (const auto& [check_name, fn] : checks()) {
    if (name.empty() || name == check_name) reports.push_back(fn());
  }
  if (reports.empty()) throw std::invalid_argument("unknown grad-check op `" + name + "`");
  return reports;
}

}  // namespace isp
