#include "isp/train_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace isp {

namespace {

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& value) {
  std::vector<std::uint64_t> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    const auto last = item.find_last_not_of(' ');
    if (first == std::string::npos) throw ConfigError("seeds: empty entry in `" + value + "`");
    const long long seed = parse_int("seeds", item.substr(first, last - first + 1));
    if (seed < 0) throw ConfigError("seeds: negative seed");
    out.push_back(static_cast<std::uint64_t>(seed));
  }
  if (out.empty()) throw ConfigError("seeds: at least one seed required");
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  const long long v = parse_int(key, value);
  if (v <= 0) throw ConfigError("`" + key + "` must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace

void TrainConfig::validate() const {
  encoder.validate();
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (task.num_classes != encoder.num_classes) {
    throw ConfigError("task and encoder disagree on num_classes");
  }
  if (prompts.text_prompts > encoder.text_tokens) {
    throw ConfigError("text_prompts exceeds text_tokens (selection needs as many content rows)");
  }
  if (prompts.visual_prompts > encoder.visual_tokens) {
    throw ConfigError("visual_prompts exceeds visual_tokens");
  }
  if (!prompts.isp_layers.empty() && prompts.isp_layers.last > encoder.num_layers) {
    throw ConfigError("isp_layers extends past the last encoder layer");
  }
  if (!(objective.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(objective.alpha_cap > 0.0)) throw ConfigError("alpha_cap must be positive");
  if (objective.visual_reg_weight < 0.0 || objective.text_reg_weight < 0.0) {
    throw ConfigError("omega_v and omega_t must be non-negative");
  }
  if (!(forward.beta > 0.0)) throw ConfigError("beta must be positive");
}

KeyValues TrainConfig::entries() const {
  KeyValues out = encoder_config_entries(encoder);
  out.insert(out.end(), {
      {"shots", std::to_string(task.shots)},
      {"test_per_class", std::to_string(task.test_per_class)},
      {"noise_scale", format_double(task.noise_scale)},
      {"text_alignment", format_double(task.text_alignment)},
      {"patch_coherence", format_double(task.patch_coherence)},
      {"text_map", format_double(task.text_map)},
      {"task_seed", std::to_string(task.seed)},
      {"visual_prompts", std::to_string(prompts.visual_prompts)},
      {"text_prompts", std::to_string(prompts.text_prompts)},
      {"isp_layers", to_string(prompts.isp_layers)},
      {"prompt_init_std", format_double(prompts.init_std)},
      {"gamma", format_double(objective.gamma)},
      {"omega_v", format_double(objective.visual_reg_weight)},
      {"omega_t", format_double(objective.text_reg_weight)},
      {"alpha_cap", format_double(objective.alpha_cap)},
      {"alpha_clip", to_string(objective.alpha_clip)},
      {"beta", format_double(forward.beta)},
      {"ssp_residual", ssp::to_string(forward.ssp_residual)},
      {"csp_text_context", csp::to_string(forward.text_context)},
      {"lr", format_double(lr)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"seeds", join_seeds(seeds)},
  });
  return out;
}

std::string TrainConfig::to_text() const { return format_key_values(entries()); }

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  const KeyValues rest = apply_encoder_config(c.encoder, parse_key_values(text));
  for (const auto& [key, value] : rest) {
    if (key == "shots") c.task.shots = parse_count(key, value);
    else if (key == "test_per_class") c.task.test_per_class = parse_count(key, value);
    else if (key == "noise_scale") c.task.noise_scale = parse_double(key, value);
    else if (key == "text_alignment") c.task.text_alignment = parse_double(key, value);
    else if (key == "patch_coherence") c.task.patch_coherence = parse_double(key, value);
    else if (key == "text_map") c.task.text_map = parse_double(key, value);
    else if (key == "task_seed") c.task.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "visual_prompts") c.prompts.visual_prompts = parse_count(key, value);
    else if (key == "text_prompts") c.prompts.text_prompts = parse_count(key, value);
    else if (key == "isp_layers") c.prompts.isp_layers = parse_layer_range(value);
    else if (key == "prompt_init_std") c.prompts.init_std = parse_double(key, value);
    else if (key == "gamma") c.objective.gamma = parse_double(key, value);
    else if (key == "omega_v") c.objective.visual_reg_weight = parse_double(key, value);
    else if (key == "omega_t") c.objective.text_reg_weight = parse_double(key, value);
    else if (key == "alpha_cap") c.objective.alpha_cap = parse_double(key, value);
    else if (key == "alpha_clip") c.objective.alpha_clip = parse_alpha_clip(value);
    else if (key == "beta") c.forward.beta = parse_double(key, value);
    else if (key == "ssp_residual") c.forward.ssp_residual = ssp::parse_residual(value);
    else if (key == "csp_text_context") c.forward.text_context = csp::parse_text_context(value);
    else if (key == "lr") c.lr = parse_double(key, value);
    else if (key == "epochs") c.epochs = static_cast<int>(parse_count(key, value));
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "seeds") c.seeds = parse_seeds(value);
    else throw ConfigError("unknown configuration key `" + key + "`");
  }
  c.task.num_classes = c.encoder.num_classes;
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return from_text(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace isp
