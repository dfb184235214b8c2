#include "isp/csp.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "isp/key_value.hpp"
#include "isp/ops.hpp"

namespace isp::csp {

std::string to_string(TextContext context) {
  return context == TextContext::mean_classes ? "mean_classes" : "per_class";
}

TextContext parse_text_context(const std::string& value) {
  if (value == "mean_classes") return TextContext::mean_classes;
  if (value == "per_class") return TextContext::per_class;
  throw ConfigError("csp_text_context: expected mean_classes or per_class, got `" + value +
                    "`");
}

Params Params::init(std::size_t dim, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  auto draw = [&] {
    std::vector<double> data(dim * dim);
    for (double& v : data) v = normal(rng);
    return Tensor({dim, dim}, std::move(data), true);
  };
  Params p;
  p.theta1 = draw();
  p.theta2 = draw();
  return p;
}

std::size_t Params::count(std::size_t dim) { return 2 * dim * dim; }

void Params::append_named(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".theta1", theta1);
  out.emplace_back(prefix + ".theta2", theta2);
}

Params Params::from_named(const WeightFile& file, const std::string& prefix) {
  auto trainable = [&](const char* name) {
    const Tensor& t = file.at(prefix + "." + name);
    return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  };
  return Params{trainable("theta1"), trainable("theta2")};
}

Tensor reduce_visual(const Tensor& tokens, std::size_t text_dim) {
  if (text_dim > tokens.cols()) {
    throw std::invalid_argument("reduce_visual: text_dim " + std::to_string(text_dim) +
                                " exceeds visual width " + std::to_string(tokens.cols()));
  }
  Tensor coefficients = dct_channels(tokens);
  if (text_dim < tokens.cols()) coefficients = slice_cols(coefficients, 0, text_dim);
  return idct_channels(coefficients, text_dim);
}

Tensor prompt_graph(const Tensor& affinity, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("prompt_graph: beta must be positive");
  return rbf_row_affinity(affinity, beta);
}

std::pair<Tensor, Tensor> visual_affinity(const Tensor& visual_prompts,
                                          const Tensor& text_tokens, double beta) {
  Tensor reduced = reduce_visual(visual_prompts, text_tokens.cols());
  Tensor cross = cosine_rows(reduced, text_tokens);
  return {cross, prompt_graph(cross, beta)};
}

std::pair<Tensor, Tensor> text_affinity(const Tensor& text_prompts,
                                        const Tensor& reduced_visual, double beta) {
  Tensor cross = cosine_rows(text_prompts, reduced_visual);
  return {cross, prompt_graph(cross, beta)};
}

AffinityPair cross_affinities(const Tensor& visual_prompts, const Tensor& text_prompts,
                              const Tensor& text_tokens, const Tensor& reduced_visual,
                              double beta) {
  AffinityPair out;
  out.beta = beta;
  std::tie(out.visual_to_text, out.visual_graph) =
      visual_affinity(visual_prompts, text_tokens, beta);
  std::tie(out.text_to_visual, out.text_graph) =
      text_affinity(text_prompts, reduced_visual, beta);
  return out;
}

Tensor graph_refine(const Tensor& prompts, const Tensor& adjacency, const Params& params) {
  if (adjacency.rank() != 2 || adjacency.rows() != prompts.rows() ||
      adjacency.cols() != prompts.rows()) {
    throw DimensionError("graph_refine: adjacency " + shape_string(adjacency.shape()) +
                         " does not match " + std::to_string(prompts.rows()) + " prompts");
  }
  Tensor propagated = matmul(sym_normalize(adjacency), prompts);
  return matmul(relu(matmul(propagated, params.theta1)), params.theta2);
}

double spectral_radius(const Tensor& symmetric) {
  if (symmetric.rank() != 2 || symmetric.rows() != symmetric.cols()) {
    throw DimensionError("spectral_radius: expected a square matrix, got " +
                         shape_string(symmetric.shape()));
  }
  const auto n = static_cast<Eigen::Index>(symmetric.rows());
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      m(symmetric.data().data(), n, n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace isp::csp
