#include "isp/ssp.hpp"

#include <cmath>

#include "isp/ops.hpp"

namespace isp::ssp {

std::string to_string(Residual residual) {
  switch (residual) {
    case Residual::tokens: return "tokens";
    case Residual::prompts: return "prompts";
    case Residual::none: return "none";
  }
  return "tokens";
}

Residual parse_residual(const std::string& value) {
  if (value == "tokens") return Residual::tokens;
  if (value == "prompts") return Residual::prompts;
  if (value == "none") return Residual::none;
  throw ConfigError("ssp_residual: expected tokens, prompts or none, got `" + value + "`");
}

namespace {

Tensor gaussian(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) v = normal(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

}  // namespace

Params Params::init(std::size_t dim, double std, std::mt19937_64& rng) {
  Params p;
  p.wq = gaussian({dim, dim}, std, rng);
  p.wk = gaussian({dim, dim}, std, rng);
  p.wv = gaussian({dim, dim}, std, rng);
  p.wo = gaussian({dim, dim}, std, rng);
  p.ln_attn_gain = Tensor::full({dim}, 1.0, true);
  p.ln_attn_bias = Tensor::zeros({dim}, true);
  p.ln_mlp_gain = Tensor::full({dim}, 1.0, true);
  p.ln_mlp_bias = Tensor::zeros({dim}, true);
  p.w1 = gaussian({dim, kMlpRatio * dim}, std, rng);
  p.b1 = Tensor::zeros({kMlpRatio * dim}, true);
  p.w2 = gaussian({kMlpRatio * dim, dim}, std, rng);
  p.b2 = Tensor::zeros({dim}, true);
  return p;
}

std::size_t Params::count(std::size_t dim) {
  return 4 * dim * dim + 4 * dim + 2 * kMlpRatio * dim * dim + kMlpRatio * dim + dim;
}

void Params::append_named(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wo", wo);
  out.emplace_back(prefix + ".ln_attn_gain", ln_attn_gain);
  out.emplace_back(prefix + ".ln_attn_bias", ln_attn_bias);
  out.emplace_back(prefix + ".ln_mlp_gain", ln_mlp_gain);
  out.emplace_back(prefix + ".ln_mlp_bias", ln_mlp_bias);
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

Params Params::from_named(const WeightFile& file, const std::string& prefix) {
  auto trainable = [&](const char* name) {
    const Tensor& t = file.at(prefix + "." + name);
    return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  };
  Params p;
  p.wq = trainable("wq");
  p.wk = trainable("wk");
  p.wv = trainable("wv");
  p.wo = trainable("wo");
  p.ln_attn_gain = trainable("ln_attn_gain");
  p.ln_attn_bias = trainable("ln_attn_bias");
  p.ln_mlp_gain = trainable("ln_mlp_gain");
  p.ln_mlp_bias = trainable("ln_mlp_bias");
  p.w1 = trainable("w1");
  p.b1 = trainable("b1");
  p.w2 = trainable("w2");
  p.b2 = trainable("b2");
  return p;
}

Tensor select_tokens(const TokenSequence& seq, std::size_t k) {
  Tensor pool = seq.content_rows();
  if (k > pool.rows()) {
    throw std::out_of_range("select_tokens: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(pool.rows()) + " content rows");
  }
  return topk_rows(pool, k).first;
}

Tensor cross_attend(const Tensor& prompts, const Tensor& selected, const Params& params,
                    Tensor* weights_out) {
  if (prompts.cols() != selected.cols() || prompts.cols() != params.dim()) {
    throw DimensionError("cross_attend: prompts " + shape_string(prompts.shape()) +
                         ", selected " + shape_string(selected.shape()) +
                         " and parameter width " + std::to_string(params.dim()) + " disagree");
  }
  Tensor q = matmul(layer_norm(prompts, params.ln_attn_gain, params.ln_attn_bias), params.wq);
  Tensor kv_in = layer_norm(selected, params.ln_attn_gain, params.ln_attn_bias);
  Tensor k = matmul(kv_in, params.wk);
  Tensor v = matmul(kv_in, params.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
  if (weights_out) *weights_out = attn;
  return matmul(matmul(attn, v), params.wo);
}

Tensor refine_prompts(const Tensor& prompts, const Tensor& selected, const Params& params,
                      Residual residual) {
  if (prompts.shape() != selected.shape()) {
    throw DimensionError("refine_prompts: prompts " + shape_string(prompts.shape()) +
                         " and selected tokens " + shape_string(selected.shape()) +
                         " must have the same shape");
  }
  Tensor attended = cross_attend(prompts, selected, params);
  switch (residual) {
    case Residual::tokens: attended = add(attended, selected); break;
    case Residual::prompts: attended = add(attended, prompts); break;
    case Residual::none: break;
  }
  Tensor hidden = gelu(add_row(
      matmul(layer_norm(attended, params.ln_mlp_gain, params.ln_mlp_bias), params.w1),
      params.b1));
  return add(add_row(matmul(hidden, params.w2), params.b2), attended);
}

}  // namespace isp::ssp
