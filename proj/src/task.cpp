#include "isp/task.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "isp/key_value.hpp"
#include "isp/ops.hpp"

namespace isp {

namespace {

using RowVector = Eigen::RowVectorXd;

RowVector to_row(const Tensor& t) {
  RowVector v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[i * t.cols() + j];
  return m;
}

void append_bytes(std::ostringstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

std::string FewShotTask::bytes() const {
  std::ostringstream out(std::ios::binary);
  out << num_classes << ' ' << shots << ' ' << seed << '\n';
  append_bytes(out, prototypes);
  append_bytes(out, class_embeddings);
  for (const auto* split : {&train, &base_test, &new_test}) {
    for (const Sample& s : *split) {
      out << s.id << ':' << s.label << ';';
      append_bytes(out, s.image);
    }
  }
  return out.str();
}

std::size_t class_index(const std::vector<std::size_t>& classes, std::size_t label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) {
    throw std::out_of_range("class " + std::to_string(label) + " is not in the class set");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

FewShotTask generate_task(const FrozenEncoder& encoder, const TaskConfig& config) {
  if (config.num_classes < 4 || config.num_classes % 2 != 0) {
    throw ConfigError("generate_task: num_classes must be even and >= 4, got " +
                      std::to_string(config.num_classes));
  }
  if (config.shots == 0 || config.test_per_class == 0) {
    throw ConfigError("generate_task: shots and test_per_class must be positive");
  }
  if (!(config.noise_scale >= 0.0)) throw ConfigError("generate_task: negative noise_scale");
  if (!(config.patch_coherence >= 0.0 && config.patch_coherence < 1.0)) {
    throw ConfigError("generate_task: patch_coherence must lie in [0, 1)");
  }
  if (!(config.text_alignment >= 0.0 && config.text_alignment <= 1.0)) {
    throw ConfigError("generate_task: text_alignment must lie in [0, 1]");
  }
  if (!(config.text_map >= 0.0 && config.text_map <= 1.0)) {
    throw ConfigError("generate_task: text_map must lie in [0, 1]");
  }

  const EncoderConfig& enc = encoder.config();
  const std::size_t classes = config.num_classes;
  const std::size_t m = enc.visual_tokens, dv = enc.visual_dim, dt = enc.text_dim;
  const std::size_t d = enc.embed_dim;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    return v;
  };

  FewShotTask task;
  task.num_classes = classes;
  task.shots = config.shots;
  task.seed = config.seed;
  for (std::size_t c = 0; c < classes; ++c) {
    (c < classes / 2 ? task.base_classes : task.new_classes).push_back(c);
  }
  {
    std::vector<double> protos = draw(classes * m * dv);
    const double shared = std::sqrt(config.patch_coherence);
    const double own = std::sqrt(1.0 - config.patch_coherence);
    for (std::size_t c = 0; c < classes; ++c) {
      const std::vector<double> u = draw(dv);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < dv; ++j) {
          double& v = protos[(c * m + r) * dv + j];
          v = shared * u[j] + own * v;
        }
    }
    task.prototypes = Tensor({classes * m, dv}, std::move(protos));
  }

  // Text targets: blend of the frozen image direction of the prototype and a
  // random direction, both unit length.
  Eigen::MatrixXd text_map = (1.0 - config.text_map) *
                             Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                                       static_cast<Eigen::Index>(d));
  {
    const std::vector<double> g = draw(d * d);
    const double s = config.text_map / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        text_map(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += s * g[i * d + j];
  }
  std::vector<RowVector> targets;
  for (std::size_t c = 0; c < classes; ++c) {
    RowVector aligned =
        to_row(encoder.image_features(slice_rows(task.prototypes, c * m, m))) * text_map;
    const std::vector<double> noise = draw(d);
    RowVector random = Eigen::Map<const RowVector>(noise.data(), static_cast<Eigen::Index>(d));
    RowVector target = config.text_alignment * aligned.normalized() +
                       (1.0 - config.text_alignment) * random.normalized();
    targets.push_back(target.normalized());
  }

  // Minimum-norm inverse of the text projection head: a pooled row h with
  // h W + b = y is y_c W^T (W W^T)^-1.
  const Eigen::MatrixXd proj = to_matrix(encoder.weights().text_proj);  // [d_t x d]
  const RowVector proj_bias = to_row(encoder.weights().text_proj_bias);
  const Eigen::LDLT<Eigen::MatrixXd> gram(proj * proj.transpose());
  auto pull_back = [&](const RowVector& y) -> RowVector {
    return gram.solve(proj * y.transpose()).transpose();
  };

  const RowVector template_last =
      to_row(slice_rows(encoder.weights().text_template, enc.text_tokens - 1, 1));
  const double row_norm = std::sqrt(static_cast<double>(dt));
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dt));
  for (std::size_t c = 0; c < classes; ++c) {
    RowVector h = pull_back(targets[c] - proj_bias);
    rows.row(static_cast<Eigen::Index>(c)) = row_norm * h.normalized() - template_last;
  }

  auto rows_tensor = [&] {
    std::vector<double> data(classes * dt);
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t j = 0; j < dt; ++j)
        data[c * dt + j] = rows(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
    return Tensor({classes, dt}, std::move(data));
  };

  // The frozen text layers bend the pooled row slightly; a few corrections in
  // feature space pull each text feature back onto its target direction.
  constexpr int kCorrections = 3;
  for (int it = 0; it < kCorrections; ++it) {
    const FrozenEncoder probe = encoder.with_class_embeddings(rows_tensor());
    const Tensor features = probe.text_features(probe.all_classes());
    for (std::size_t c = 0; c < classes; ++c) {
      const RowVector w = to_row(slice_rows(features, c, 1));
      const RowVector error = w.norm() * targets[c] - w;
      rows.row(static_cast<Eigen::Index>(c)) += pull_back(error);
    }
  }
  task.class_embeddings = rows_tensor();

  std::size_t next_id = 0;
  auto make_samples = [&](const std::vector<std::size_t>& ids, std::size_t per_class) {
    std::vector<Sample> out;
    for (std::size_t c : ids) {
      const auto proto = task.prototypes.data().subspan(c * m * dv, m * dv);
      for (std::size_t s = 0; s < per_class; ++s) {
        std::vector<double> image = draw(m * dv);
        for (std::size_t i = 0; i < image.size(); ++i) {
          image[i] = proto[i] + config.noise_scale * image[i];
        }
        out.push_back(Sample{next_id++, c, Tensor({m, dv}, std::move(image))});
      }
    }
    return out;
  };
  task.train = make_samples(task.base_classes, config.shots);
  next_id = 0;
  task.base_test = make_samples(task.base_classes, config.test_per_class);
  next_id = 0;
  task.new_test = make_samples(task.new_classes, config.test_per_class);
  return task;
}

}  // namespace isp
