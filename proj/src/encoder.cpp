#include "isp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "isp/ops.hpp"

namespace isp {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("encoder: layers must be >= 1");
  if (visual_dim == 0 || text_dim == 0 || embed_dim == 0 || visual_tokens == 0 ||
      text_tokens == 0 || num_heads == 0 || num_classes == 0) {
    throw ConfigError("encoder: all dimensions must be positive");
  }
  if (visual_dim <= text_dim) {
    throw ConfigError("encoder: visual_dim must exceed text_dim (channel reduction)");
  }
  if (visual_dim % num_heads != 0 || text_dim % num_heads != 0) {
    throw ConfigError("encoder: visual_dim and text_dim must be divisible by heads");
  }
  if (!(temperature > 0.0)) throw ConfigError("encoder: temperature must be positive");
  if (!(init_std > 0.0)) throw ConfigError("encoder: init_std must be positive");
}

std::string to_string(TextPooling pooling) {
  return pooling == TextPooling::last_token ? "last_token" : "mean";
}

TextPooling parse_text_pooling(const std::string& value) {
  if (value == "last_token") return TextPooling::last_token;
  if (value == "mean") return TextPooling::mean;
  throw ConfigError("text_pooling: expected last_token or mean, got `" + value + "`");
}

KeyValues encoder_config_entries(const EncoderConfig& c) {
  return {
      {"layers", std::to_string(c.num_layers)},
      {"visual_dim", std::to_string(c.visual_dim)},
      {"text_dim", std::to_string(c.text_dim)},
      {"visual_tokens", std::to_string(c.visual_tokens)},
      {"text_tokens", std::to_string(c.text_tokens)},
      {"heads", std::to_string(c.num_heads)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"num_classes", std::to_string(c.num_classes)},
      {"temperature", format_double(c.temperature)},
      {"init_std", format_double(c.init_std)},
      {"encoder_seed", std::to_string(c.seed)},
      {"text_pooling", to_string(c.text_pooling)},
  };
}

KeyValues apply_encoder_config(EncoderConfig& c, const KeyValues& entries) {
  KeyValues rest;
  auto positive = [](const std::string& key, const std::string& value) {
    const long long v = parse_int(key, value);
    if (v <= 0) throw ConfigError("`" + key + "` must be positive");
    return static_cast<std::size_t>(v);
  };
  for (const auto& [key, value] : entries) {
    if (key == "layers") c.num_layers = static_cast<int>(positive(key, value));
    else if (key == "visual_dim") c.visual_dim = positive(key, value);
    else if (key == "text_dim") c.text_dim = positive(key, value);
    else if (key == "visual_tokens") c.visual_tokens = positive(key, value);
    else if (key == "text_tokens") c.text_tokens = positive(key, value);
    else if (key == "heads") c.num_heads = positive(key, value);
    else if (key == "embed_dim") c.embed_dim = positive(key, value);
    else if (key == "num_classes") c.num_classes = positive(key, value);
    else if (key == "temperature") c.temperature = parse_double(key, value);
    else if (key == "init_std") c.init_std = parse_double(key, value);
    else if (key == "encoder_seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "text_pooling") c.text_pooling = parse_text_pooling(value);
    else rest.emplace_back(key, value);
  }
  return rest;
}

// ---------------------------------------------------------------------------

std::size_t TokenSequence::prompt_count() const {
  std::size_t n = 0;
  for (auto it = roles.rbegin(); it != roles.rend() && *it == Role::prompt; ++it) ++n;
  return n;
}

Tensor TokenSequence::frozen_rows() const {
  const std::size_t n = prompt_start();
  return n == length() ? tokens : slice_rows(tokens, 0, n);
}

Tensor TokenSequence::content_rows() const {
  const std::size_t first = (!roles.empty() && roles.front() == Role::class_token) ? 1 : 0;
  const std::size_t count = prompt_start() - first;
  if (count == 0) throw DimensionError("TokenSequence: no content rows");
  if (first == 0 && count == length()) return tokens;
  return slice_rows(tokens, first, count);
}

Tensor TokenSequence::prompt_rows() const {
  const std::size_t n = prompt_count();
  if (n == 0) throw DimensionError("TokenSequence: no prompt rows");
  return slice_rows(tokens, prompt_start(), n);
}

TokenSequence TokenSequence::with_prompts(const Tensor& prompts) const {
  if (prompts.cols() != tokens.cols()) {
    throw DimensionError("with_prompts: prompt width " + shape_string(prompts.shape()) +
                         " does not match sequence " + shape_string(tokens.shape()));
  }
  TokenSequence out;
  out.modality = modality;
  out.layer_index = layer_index;
  out.tokens = concat_rows({frozen_rows(), prompts});
  out.roles.assign(roles.begin(), roles.begin() + static_cast<std::ptrdiff_t>(prompt_start()));
  out.roles.insert(out.roles.end(), prompts.rows(), Role::prompt);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Initializer {
 public:
  Initializer(std::uint64_t seed, double std) : rng_(seed), normal_(0.0, std) {}

  Tensor gaussian(Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n);
    for (double& v : data) v = normal_(rng_);
    return Tensor(std::move(shape), std::move(data));
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

BlockWeights init_block(Initializer& init, std::size_t dim) {
  constexpr std::size_t kMlpRatio = 4;
  BlockWeights b;
  b.ln1_gain = Tensor::full({dim}, 1.0);
  b.ln1_bias = Tensor::zeros({dim});
  b.wq = init.gaussian({dim, dim});
  b.bq = Tensor::zeros({dim});
  b.wk = init.gaussian({dim, dim});
  b.bk = Tensor::zeros({dim});
  b.wv = init.gaussian({dim, dim});
  b.bv = Tensor::zeros({dim});
  b.wo = init.gaussian({dim, dim});
  b.bo = Tensor::zeros({dim});
  b.ln2_gain = Tensor::full({dim}, 1.0);
  b.ln2_bias = Tensor::zeros({dim});
  b.w1 = init.gaussian({dim, kMlpRatio * dim});
  b.b1 = Tensor::zeros({kMlpRatio * dim});
  b.w2 = init.gaussian({kMlpRatio * dim, dim});
  b.b2 = Tensor::zeros({dim});
  return b;
}

EncoderWeights init_weights(const EncoderConfig& c) {
  Initializer init(c.seed, c.init_std);
  EncoderWeights w;
  w.class_token = init.gaussian({1, c.visual_dim});
  w.visual_positional = init.gaussian({c.visual_tokens + 1, c.visual_dim});
  w.text_template = init.gaussian({c.text_tokens, c.text_dim});
  w.class_embeddings = init.gaussian({c.num_classes, c.text_dim});
  for (int l = 0; l < c.num_layers; ++l) w.visual_blocks.push_back(init_block(init, c.visual_dim));
  for (int l = 0; l < c.num_layers; ++l) w.text_blocks.push_back(init_block(init, c.text_dim));
  w.visual_proj = init.gaussian({c.visual_dim, c.embed_dim});
  w.visual_proj_bias = Tensor::zeros({c.embed_dim});
  w.text_proj = init.gaussian({c.text_dim, c.embed_dim});
  w.text_proj_bias = Tensor::zeros({c.embed_dim});
  return w;
}

void append_block(NamedTensors& out, const std::string& prefix, const BlockWeights& b) {
  out.emplace_back(prefix + ".ln1_gain", b.ln1_gain);
  out.emplace_back(prefix + ".ln1_bias", b.ln1_bias);
  out.emplace_back(prefix + ".wq", b.wq);
  out.emplace_back(prefix + ".bq", b.bq);
  out.emplace_back(prefix + ".wk", b.wk);
  out.emplace_back(prefix + ".bk", b.bk);
  out.emplace_back(prefix + ".wv", b.wv);
  out.emplace_back(prefix + ".bv", b.bv);
  out.emplace_back(prefix + ".wo", b.wo);
  out.emplace_back(prefix + ".bo", b.bo);
  out.emplace_back(prefix + ".ln2_gain", b.ln2_gain);
  out.emplace_back(prefix + ".ln2_bias", b.ln2_bias);
  out.emplace_back(prefix + ".w1", b.w1);
  out.emplace_back(prefix + ".b1", b.b1);
  out.emplace_back(prefix + ".w2", b.w2);
  out.emplace_back(prefix + ".b2", b.b2);
}

BlockWeights read_block(const WeightFile& file, const std::string& prefix) {
  BlockWeights b;
  b.ln1_gain = file.at(prefix + ".ln1_gain");
  b.ln1_bias = file.at(prefix + ".ln1_bias");
  b.wq = file.at(prefix + ".wq");
  b.bq = file.at(prefix + ".bq");
  b.wk = file.at(prefix + ".wk");
  b.bk = file.at(prefix + ".bk");
  b.wv = file.at(prefix + ".wv");
  b.bv = file.at(prefix + ".bv");
  b.wo = file.at(prefix + ".wo");
  b.bo = file.at(prefix + ".bo");
  b.ln2_gain = file.at(prefix + ".ln2_gain");
  b.ln2_bias = file.at(prefix + ".ln2_bias");
  b.w1 = file.at(prefix + ".w1");
  b.b1 = file.at(prefix + ".b1");
  b.w2 = file.at(prefix + ".w2");
  b.b2 = file.at(prefix + ".b2");
  return b;
}

void check_shape(const std::string& name, const Tensor& t, const Shape& expected) {
  if (t.shape() != expected) {
    throw FormatError("ISPW: block `" + name + "` has shape " + shape_string(t.shape()) +
                      ", expected " + shape_string(expected));
  }
}

}  // namespace

NamedTensors EncoderWeights::named() const {
  NamedTensors out;
  out.emplace_back("visual.class_token", class_token);
  out.emplace_back("visual.positional", visual_positional);
  out.emplace_back("text.template", text_template);
  out.emplace_back("text.class_embeddings", class_embeddings);
  for (std::size_t l = 0; l < visual_blocks.size(); ++l)
    append_block(out, "visual.block" + std::to_string(l + 1), visual_blocks[l]);
  for (std::size_t l = 0; l < text_blocks.size(); ++l)
    append_block(out, "text.block" + std::to_string(l + 1), text_blocks[l]);
  out.emplace_back("visual.proj", visual_proj);
  out.emplace_back("visual.proj_bias", visual_proj_bias);
  out.emplace_back("text.proj", text_proj);
  out.emplace_back("text.proj_bias", text_proj_bias);
  return out;
}

EncoderWeights EncoderWeights::from_named(const EncoderConfig& config, const WeightFile& file) {
  EncoderWeights w;
  w.class_token = file.at("visual.class_token");
  w.visual_positional = file.at("visual.positional");
  w.text_template = file.at("text.template");
  w.class_embeddings = file.at("text.class_embeddings");
  for (int l = 1; l <= config.num_layers; ++l) {
    w.visual_blocks.push_back(read_block(file, "visual.block" + std::to_string(l)));
    w.text_blocks.push_back(read_block(file, "text.block" + std::to_string(l)));
  }
  w.visual_proj = file.at("visual.proj");
  w.visual_proj_bias = file.at("visual.proj_bias");
  w.text_proj = file.at("text.proj");
  w.text_proj_bias = file.at("text.proj_bias");

  // Shapes are checked against a freshly initialized reference layout.
  EncoderConfig probe = config;
  const NamedTensors reference = init_weights(probe).named();
  const NamedTensors loaded = w.named();
  for (std::size_t i = 0; i < reference.size(); ++i) {
    check_shape(reference[i].first, loaded[i].second, reference[i].second.shape());
  }
  return w;
}

EncoderWeights EncoderWeights::clone() const {
  auto copy = [](const Tensor& t) { return t.detach(); };
  EncoderWeights w;
  w.class_token = copy(class_token);
  w.visual_positional = copy(visual_positional);
  w.text_template = copy(text_template);
  w.class_embeddings = copy(class_embeddings);
  auto copy_block = [&](const BlockWeights& b) {
    return BlockWeights{copy(b.ln1_gain), copy(b.ln1_bias), copy(b.wq), copy(b.bq),
                        copy(b.wk),       copy(b.bk),       copy(b.wv), copy(b.bv),
                        copy(b.wo),       copy(b.bo),       copy(b.ln2_gain),
                        copy(b.ln2_bias), copy(b.w1),       copy(b.b1), copy(b.w2),
                        copy(b.b2)};
  };
  for (const auto& b : visual_blocks) w.visual_blocks.push_back(copy_block(b));
  for (const auto& b : text_blocks) w.text_blocks.push_back(copy_block(b));
  w.visual_proj = copy(visual_proj);
  w.visual_proj_bias = copy(visual_proj_bias);
  w.text_proj = copy(text_proj);
  w.text_proj_bias = copy(text_proj_bias);
  return w;
}

// ---------------------------------------------------------------------------

Tensor cosine_logits(const Tensor& x, const Tensor& w, double temperature) {
  return scale(cosine_rows(x, w), 1.0 / temperature);
}

FrozenEncoder::FrozenEncoder(EncoderConfig config) : config_(config) {
  config_.validate();
  weights_ = init_weights(config_);
}

FrozenEncoder::FrozenEncoder(EncoderConfig config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
}

FrozenEncoder FrozenEncoder::with_class_embeddings(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.cols() != config_.text_dim) {
    throw DimensionError("with_class_embeddings: expected [C x " +
                         std::to_string(config_.text_dim) + "], got " + shape_string(rows.shape()));
  }
  EncoderConfig config = config_;
  config.num_classes = rows.rows();
  EncoderWeights weights = weights_;
  weights.class_embeddings = rows.detach();
  return FrozenEncoder(config, std::move(weights));
}

TokenSequence FrozenEncoder::embed_image(const Tensor& patches) const {
  if (patches.rank() != 2 || patches.rows() != config_.visual_tokens ||
      patches.cols() != config_.visual_dim) {
    throw DimensionError("embed_image: expected patches [" +
                         std::to_string(config_.visual_tokens) + "x" +
                         std::to_string(config_.visual_dim) + "], got " +
                         shape_string(patches.shape()));
  }
  TokenSequence seq;
  seq.modality = Modality::visual;
  seq.tokens = add(concat_rows({weights_.class_token, patches}), weights_.visual_positional);
  seq.roles.assign(config_.visual_tokens + 1, Role::content);
  seq.roles.front() = Role::class_token;
  return seq;
}

TokenSequence FrozenEncoder::embed_text(std::size_t class_id) const {
  if (class_id >= weights_.class_embeddings.rows()) {
    throw std::out_of_range("embed_text: class " + std::to_string(class_id) + " outside [0, " +
                            std::to_string(weights_.class_embeddings.rows()) + ")");
  }
  // The class-name row sits in the final template position, the row the
  // text feature is pooled from.
  const std::size_t n = config_.text_tokens;
  Tensor name = slice_rows(weights_.class_embeddings, class_id, 1);
  std::vector<Tensor> parts;
  if (n > 1) parts.push_back(slice_rows(weights_.text_template, 0, n - 1));
  parts.push_back(add(slice_rows(weights_.text_template, n - 1, 1), name));
  TokenSequence seq;
  seq.modality = Modality::text;
  seq.tokens = concat_rows(parts);
  seq.roles.assign(n, Role::content);
  return seq;
}

TokenSequence FrozenEncoder::encode_layer(const TokenSequence& seq, int layer,
                                          const LayerOptions& options) const {
  if (layer < 1 || layer > config_.num_layers) {
    throw std::out_of_range("encode_layer: layer " + std::to_string(layer) + " outside [1, " +
                            std::to_string(config_.num_layers) + "]");
  }
  const bool visual = seq.modality == Modality::visual;
  const BlockWeights& b =
      visual ? weights_.visual_blocks[layer - 1] : weights_.text_blocks[layer - 1];
  const std::size_t dim = visual ? config_.visual_dim : config_.text_dim;
  if (seq.tokens.cols() != dim) {
    throw DimensionError("encode_layer: sequence width " + shape_string(seq.tokens.shape()) +
                         " does not match modality dimension " + std::to_string(dim));
  }
  const std::size_t heads = config_.num_heads;
  const std::size_t head_dim = dim / heads;

  const Tensor& x = seq.tokens;
  Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias);
  Tensor q = add_row(matmul(h, b.wq), b.bq);
  Tensor k = add_row(matmul(h, b.wk), b.bk);
  Tensor v = add_row(matmul(h, b.wv), b.bv);
  if (options.mask_prompt_keys && seq.prompt_count() > 0) {
    k = slice_rows(k, 0, seq.prompt_start());
    v = slice_rows(v, 0, seq.prompt_start());
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor qh = heads == 1 ? q : slice_cols(q, hd * head_dim, head_dim);
    Tensor kh = heads == 1 ? k : slice_cols(k, hd * head_dim, head_dim);
    Tensor vh = heads == 1 ? v : slice_cols(v, hd * head_dim, head_dim);
    Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    head_out.push_back(matmul(attn, vh));
  }
  Tensor attended = heads == 1 ? head_out.front() : concat_cols(head_out);
  Tensor x1 = add(x, add_row(matmul(attended, b.wo), b.bo));

  Tensor h2 = layer_norm(x1, b.ln2_gain, b.ln2_bias);
  Tensor mlp = add_row(matmul(gelu(add_row(matmul(h2, b.w1), b.b1)), b.w2), b.b2);

  TokenSequence out;
  out.tokens = add(x1, mlp);
  out.roles = seq.roles;
  out.modality = seq.modality;
  out.layer_index = layer;
  return out;
}

Tensor FrozenEncoder::project_features(const TokenSequence& seq) const {
  if (seq.layer_index != config_.num_layers) {
    throw std::invalid_argument("project_features: sequence is at layer " +
                                std::to_string(seq.layer_index) + ", expected " +
                                std::to_string(config_.num_layers));
  }
  if (seq.modality == Modality::visual) {
    if (seq.roles.empty() || seq.roles.front() != Role::class_token) {
      throw std::invalid_argument("project_features: visual sequence lacks a class token");
    }
    return add_row(matmul(slice_rows(seq.tokens, 0, 1), weights_.visual_proj),
                   weights_.visual_proj_bias);
  }
  Tensor pooled = config_.text_pooling == TextPooling::last_token
                      ? slice_rows(seq.tokens, seq.prompt_start() - 1, 1)
                      : mean_rows(seq.frozen_rows());
  return add_row(matmul(pooled, weights_.text_proj), weights_.text_proj_bias);
}

Tensor FrozenEncoder::text_features(std::span<const std::size_t> classes) const {
  std::vector<Tensor> rows;
  rows.reserve(classes.size());
  for (std::size_t c : classes) {
    TokenSequence seq = embed_text(c);
    for (int l = 1; l <= config_.num_layers; ++l) seq = encode_layer(seq, l);
    rows.push_back(project_features(seq));
  }
  return concat_rows(rows);
}

Tensor FrozenEncoder::image_features(const Tensor& image) const {
  TokenSequence seq = embed_image(image);
  for (int l = 1; l <= config_.num_layers; ++l) seq = encode_layer(seq, l);
  return project_features(seq);
}

FrozenFeatures FrozenEncoder::zero_shot_predict_with(const Tensor& image,
                                                     const Tensor& w_prime) const {
  FrozenFeatures out;
  out.x_prime = image_features(image);
  out.w_prime = w_prime;
  out.p_zero_shot = softmax_rows(cosine_logits(out.x_prime, w_prime, config_.temperature));
  return out;
}

FrozenFeatures FrozenEncoder::zero_shot_predict(const Tensor& image,
                                                std::span<const std::size_t> classes) const {
  return zero_shot_predict_with(image, text_features(classes));
}

FrozenFeatures FrozenEncoder::zero_shot_predict(const Tensor& image) const {
  const auto classes = all_classes();
  return zero_shot_predict(image, classes);
}

std::vector<std::size_t> FrozenEncoder::all_classes() const {
  std::vector<std::size_t> ids(weights_.class_embeddings.rows());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

WeightFile FrozenEncoder::to_weight_file() const {
  WeightFile file;
  file.config_text = format_key_values(encoder_config_entries(config_));
  file.blocks = weights_.named();
  return file;
}

FrozenEncoder FrozenEncoder::from_weight_file(const WeightFile& file) {
  EncoderConfig config;
  apply_encoder_config(config, parse_key_values(file.config_text));
  return FrozenEncoder(config, EncoderWeights::from_named(config, file));
}

std::string FrozenEncoder::weight_bytes() const { return ispw_bytes(to_weight_file()); }

}  // namespace isp
