#include "isp/pipeline.hpp"

#include <random>

#include "isp/key_value.hpp"
#include "isp/ops.hpp"

namespace isp {

std::string to_string(LayerRange range) {
  if (range.empty()) return "none";
  return std::to_string(range.first) + "-" + std::to_string(range.last);
}

LayerRange parse_layer_range(const std::string& value) {
  if (value == "none") return LayerRange{1, 0};
  const auto dash = value.find('-');
  if (dash == std::string::npos) {
    throw ConfigError("isp_layers: expected `first-last` or `none`, got `" + value + "`");
  }
  LayerRange range{static_cast<int>(parse_int("isp_layers", value.substr(0, dash))),
                   static_cast<int>(parse_int("isp_layers", value.substr(dash + 1)))};
  if (range.first < 1 || range.empty()) {
    throw ConfigError("isp_layers: invalid range `" + value + "`");
  }
  return range;
}

const IspLayer* PromptSet::find_layer(int layer) const {
  for (const IspLayer& l : layers) {
    if (l.layer == layer) return &l;
  }
  return nullptr;
}

NamedTensors PromptSet::named() const {
  NamedTensors out;
  out.emplace_back("prompt.visual", visual_prompts);
  out.emplace_back("prompt.text", text_prompts);
  for (const IspLayer& l : layers) {
    const std::string prefix = "isp" + std::to_string(l.layer);
    l.ssp_visual.append_named(out, prefix + ".ssp_visual");
    l.ssp_text.append_named(out, prefix + ".ssp_text");
    l.csp_visual.append_named(out, prefix + ".csp_visual");
    l.csp_text.append_named(out, prefix + ".csp_text");
  }
  return out;
}

std::vector<Tensor> PromptSet::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, tensor] : named()) out.push_back(tensor);
  return out;
}

std::size_t PromptSet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

std::size_t isp_layer_parameter_count(std::size_t visual_dim, std::size_t text_dim) {
  return ssp::Params::count(visual_dim) + ssp::Params::count(text_dim) +
         csp::Params::count(visual_dim) + csp::Params::count(text_dim);
}

PromptSet init_prompts(const EncoderConfig& encoder, const PromptConfig& config,
                       std::uint64_t seed) {
  if (config.visual_prompts == 0 || config.text_prompts == 0) {
    throw ConfigError("prompt lengths must be positive");
  }
  if (!config.isp_layers.empty() &&
      (config.isp_layers.first < 1 || config.isp_layers.last > encoder.num_layers)) {
    throw ConfigError("isp_layers " + to_string(config.isp_layers) + " outside [1, " +
                      std::to_string(encoder.num_layers) + "]");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto draw = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> data(rows * cols);
    for (double& v : data) v = normal(rng);
    return Tensor({rows, cols}, std::move(data), true);
  };
  PromptSet set;
  set.visual_prompts = draw(config.visual_prompts, encoder.visual_dim);
  set.text_prompts = draw(config.text_prompts, encoder.text_dim);
  set.isp_layers = config.isp_layers;
  if (!config.isp_layers.empty()) {
    for (int l = config.isp_layers.first; l <= config.isp_layers.last; ++l) {
      IspLayer layer;
      layer.layer = l;
      layer.ssp_visual = ssp::Params::init(encoder.visual_dim, config.init_std, rng);
      layer.ssp_text = ssp::Params::init(encoder.text_dim, config.init_std, rng);
      layer.csp_visual = csp::Params::init(encoder.visual_dim, config.init_std, rng);
      layer.csp_text = csp::Params::init(encoder.text_dim, config.init_std, rng);
      set.layers.push_back(std::move(layer));
    }
  }
  return set;
}

PromptSet PromptSet::from_weight_file(const WeightFile& file, const EncoderConfig& encoder,
                                      const PromptConfig& config) {
  auto trainable = [&](const std::string& name, Shape expected) {
    const Tensor& t = file.at(name);
    if (t.shape() != expected) {
      throw FormatError("ISPW: block `" + name + "` has shape " + shape_string(t.shape()) +
                        ", expected " + shape_string(expected));
    }
    return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  };
  PromptSet set;
  set.visual_prompts = trainable("prompt.visual", {config.visual_prompts, encoder.visual_dim});
  set.text_prompts = trainable("prompt.text", {config.text_prompts, encoder.text_dim});
  set.isp_layers = config.isp_layers;
  if (!config.isp_layers.empty()) {
    for (int l = config.isp_layers.first; l <= config.isp_layers.last; ++l) {
      const std::string prefix = "isp" + std::to_string(l);
      IspLayer layer;
      layer.layer = l;
      layer.ssp_visual = ssp::Params::from_named(file, prefix + ".ssp_visual");
      layer.ssp_text = ssp::Params::from_named(file, prefix + ".ssp_text");
      layer.csp_visual = csp::Params::from_named(file, prefix + ".csp_visual");
      layer.csp_text = csp::Params::from_named(file, prefix + ".csp_text");
      set.layers.push_back(std::move(layer));
    }
  }
  return set;
}

namespace {

Tensor mean_of(const std::vector<Tensor>& parts) {
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return parts.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace

PromptedOutput forward(const FrozenEncoder& encoder, const Tensor& image,
                       const PromptSet& prompts, std::span<const std::size_t> classes,
                       const ForwardOptions& options) {
  if (classes.empty()) throw std::invalid_argument("forward: empty class set");
  const EncoderConfig& cfg = encoder.config();
  const std::size_t num_visual = prompts.visual_prompts.rows();
  const std::size_t num_text = prompts.text_prompts.rows();
  const std::size_t num_classes = classes.size();
  const LayerOptions layer_options{options.mask_prompt_keys};

  TokenSequence visual = encoder.embed_image(image).with_prompts(prompts.visual_prompts);
  std::vector<TokenSequence> text;
  text.reserve(num_classes);
  for (std::size_t c : classes) {
    text.push_back(encoder.embed_text(c).with_prompts(prompts.text_prompts));
  }

  PromptedOutput out;
  for (int l = 1; l <= cfg.num_layers; ++l) {
    visual = encoder.encode_layer(visual, l, layer_options);
    for (auto& seq : text) seq = encoder.encode_layer(seq, l, layer_options);

    const IspLayer* isp = prompts.isp_layers.contains(l) ? prompts.find_layer(l) : nullptr;
    if (!isp) continue;

    // Self-structural refinement within each sequence.
    Tensor visual_refined =
        ssp::refine_prompts(visual.prompt_rows(), ssp::select_tokens(visual, num_visual),
                            isp->ssp_visual, options.ssp_residual);
    std::vector<Tensor> text_refined;
    text_refined.reserve(num_classes);
    for (const auto& seq : text) {
      text_refined.push_back(ssp::refine_prompts(seq.prompt_rows(),
                                                 ssp::select_tokens(seq, num_text),
                                                 isp->ssp_text, options.ssp_residual));
    }

    // Cross-structural graphs.
    Tensor reduced_visual = csp::reduce_visual(visual.tokens, cfg.text_dim);
    std::vector<Tensor> text_tokens;
    text_tokens.reserve(num_classes);
    for (const auto& seq : text) text_tokens.push_back(seq.frozen_rows());

    std::vector<Tensor> visual_cross;
    Tensor visual_graph;
    if (options.text_context == csp::TextContext::mean_classes) {
      auto [cross, graph] = csp::visual_affinity(visual_refined, mean_of(text_tokens), options.beta);
      visual_cross.assign(num_classes, cross);
      visual_graph = graph;
    } else {
      std::vector<Tensor> graphs;
      for (const Tensor& tokens : text_tokens) {
        auto [cross, graph] = csp::visual_affinity(visual_refined, tokens, options.beta);
        visual_cross.push_back(cross);
        graphs.push_back(graph);
      }
      visual_graph = mean_of(graphs);
    }
    Tensor visual_next = csp::graph_refine(visual_refined, visual_graph, isp->csp_visual);

    LayerTrace trace;
    for (std::size_t c = 0; c < num_classes; ++c) {
      auto [cross, graph] = csp::text_affinity(text_refined[c], reduced_visual, options.beta);
      Tensor text_next = csp::graph_refine(text_refined[c], graph, isp->csp_text);
      text[c] = text[c].with_prompts(text_next);
      if (options.record_trace) {
        trace.text_prompts.push_back(text_next);
        trace.affinity.push_back(
            csp::AffinityPair{visual_cross[c], cross, visual_graph, graph, options.beta});
      }
    }
    visual = visual.with_prompts(visual_next);
    if (options.record_trace) {
      trace.layer = l;
      trace.visual_prompts = visual_next;
      out.trace.push_back(std::move(trace));
    }
  }

  out.x = encoder.project_features(visual);
  std::vector<Tensor> features;
  features.reserve(num_classes);
  for (const auto& seq : text) features.push_back(encoder.project_features(seq));
  out.w = concat_rows(features);
  out.logits = cosine_logits(out.x, out.w, cfg.temperature);
  out.p = softmax_rows(out.logits);
  return out;
}

}  // namespace isp
