#include "isp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace isp {

using detail::make_result;
using detail::Node;

namespace {

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::span<double> grad_of(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

const std::vector<double>& data_of(const Node& self, std::size_t i) {
  return self.parents[i]->data;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(a.shape()));
  }
}

// Shape of a row-wise op result: matrices keep their shape, vectors stay vectors.
Shape rowwise_shape(const Tensor& a) { return a.shape(); }

template <typename Fn>
Tensor unary(const char* op, const Tensor& a, Fn value, auto derivative) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(x[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [derivative](Node& self) {
    auto g = grad_of(self, 0);
    const auto& x = data_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(x[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      auto g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto g = grad_of(self, p);
      const auto& other = data_of(self, 1 - p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) +
                         " does not match columns of " + shape_string(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  return make_result("add_row", a.shape(), std::move(out), {a, bias},
                     [m, n](Node& self) {
                       if (wants(self, 0)) {
                         auto g = grad_of(self, 0);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (wants(self, 1)) {
                         auto g = grad_of(self, 1);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * yrow[j];
    }
  }
  return make_result("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    if (wants(self, 0)) {
      // dA = G B^T
      auto ga = grad_of(self, 0);
      const auto& y = data_of(self, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (wants(self, 1)) {
      // dB = A^T G
      auto gb = grad_of(self, 1);
      const auto& x = data_of(self, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          if (xv == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return make_result("transpose", Shape{n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto g = grad_of(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    const double hi = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += out[i * n + j] = std::exp(row[j] - hi);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result("softmax_rows", rowwise_shape(a), std::move(out), {a},
                     [m, n](Node& self) {
                       auto g = grad_of(self, 0);
                       const auto& y = self.data;
                       for (std::size_t i = 0; i < m; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += self.grad[i * n + j] * y[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           g[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    const double hi = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - hi);
    const double log_total = hi + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - log_total;
  }
  return make_result("log_softmax_rows", rowwise_shape(a), std::move(out), {a},
                     [m, n](Node& self) {
                       auto g = grad_of(self, 0);
                       for (std::size_t i = 0; i < m; ++i) {
                         double total = 0.0;
                         for (std::size_t j = 0; j < n; ++j) total += self.grad[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           g[i * n + j] +=
                               self.grad[i * n + j] - std::exp(self.data[i * n + j]) * total;
                       }
                     });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double epsilon) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match last dimension of " +
                         shape_string(a.shape()));
  }
  std::vector<double> out(a.size());
  // Saved per row: normalized values and reciprocal standard deviation.
  auto normalized = std::make_shared<std::vector<double>>(a.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (row[j] - mu) * r;
      (*normalized)[i * n + j] = xhat;
      out[i * n + j] = xhat * gain[j] + bias[j];
    }
  }
  return make_result(
      "layer_norm", rowwise_shape(a), std::move(out), {a, gain, bias},
      [m, n, normalized, inv_std](Node& self) {
        const auto& xhat = *normalized;
        const auto& gamma = data_of(self, 1);
        if (wants(self, 1)) {
          auto g = grad_of(self, 1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * xhat[i * n + j];
        }
        if (wants(self, 2)) {
          auto g = grad_of(self, 2);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
        if (wants(self, 0)) {
          auto g = grad_of(self, 0);
          const double dn = static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[i * n + j] * gamma[j];
              sum_d += d;
              sum_dx += d * xhat[i * n + j];
            }
            const double r = (*inv_std)[i];
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[i * n + j] * gamma[j];
              g[i * n + j] += r / dn * (dn * d - sum_d - xhat[i * n + j] * sum_dx);
            }
          }
        }
      });
}

namespace {

std::vector<double> row_norms(const char* op, const char* which, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    norms[i] = std::sqrt(s);
    if (norms[i] < kMinRowNorm) {
      throw NumericError(std::string(op) + ": degenerate (zero-norm) vector at row " +
                         std::to_string(i) + " of " + which);
    }
  }
  return norms;
}

}  // namespace

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  const std::size_t p = a.rows(), q = b.rows(), d = a.cols();
  if (b.cols() != d) {
    throw DimensionError("cosine_rows: feature dimensions differ, " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  auto na = std::make_shared<std::vector<double>>(row_norms("cosine_rows", "a", a));
  auto nb = std::make_shared<std::vector<double>>(row_norms("cosine_rows", "b", b));
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += a[i * d + k] * b[j * d + k];
      out[i * q + j] = std::clamp(dot / ((*na)[i] * (*nb)[j]), -1.0, 1.0);
    }
  return make_result("cosine_rows", Shape{p, q}, std::move(out), {a, b},
                     [p, q, d, na, nb](Node& self) {
                       const auto& x = data_of(self, 0);
                       const auto& y = data_of(self, 1);
                       const bool ga_on = wants(self, 0), gb_on = wants(self, 1);
                       std::span<double> ga, gb;
                       if (ga_on) ga = grad_of(self, 0);
                       if (gb_on) gb = grad_of(self, 1);
                       for (std::size_t i = 0; i < p; ++i)
                         for (std::size_t j = 0; j < q; ++j) {
                           const double g = self.grad[i * q + j];
                           if (g == 0.0) continue;
                           const double c = self.data[i * q + j];
                           const double inv = 1.0 / ((*na)[i] * (*nb)[j]);
                           if (ga_on) {
                             const double ca = c / ((*na)[i] * (*na)[i]);
                             for (std::size_t k = 0; k < d; ++k)
                               ga[i * d + k] += g * (y[j * d + k] * inv - ca * x[i * d + k]);
                           }
                           if (gb_on) {
                             const double cb = c / ((*nb)[j] * (*nb)[j]);
                             for (std::size_t k = 0; k < d; ++k)
                               gb[j * d + k] += g * (x[i * d + k] * inv - cb * y[j * d + k]);
                           }
                         }
                     });
}

Tensor paired_cosine(const Tensor& a, const Tensor& b) {
  require_same_shape("paired_cosine", a, b);
  const std::size_t m = a.rows(), d = a.cols();
  auto na = std::make_shared<std::vector<double>>(row_norms("paired_cosine", "a", a));
  auto nb = std::make_shared<std::vector<double>>(row_norms("paired_cosine", "b", b));
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += a[i * d + k] * b[i * d + k];
    out[i] = std::clamp(dot / ((*na)[i] * (*nb)[i]), -1.0, 1.0);
  }
  return make_result("paired_cosine", Shape{m}, std::move(out), {a, b},
                     [m, d, na, nb](Node& self) {
                       const auto& x = data_of(self, 0);
                       const auto& y = data_of(self, 1);
                       for (std::size_t i = 0; i < m; ++i) {
                         const double g = self.grad[i], c = self.data[i];
                         const double inv = 1.0 / ((*na)[i] * (*nb)[i]);
                         if (wants(self, 0)) {
                           auto ga = grad_of(self, 0);
                           const double ca = c / ((*na)[i] * (*na)[i]);
                           for (std::size_t k = 0; k < d; ++k)
                             ga[i * d + k] += g * (y[i * d + k] * inv - ca * x[i * d + k]);
                         }
                         if (wants(self, 1)) {
                           auto gb = grad_of(self, 1);
                           const double cb = c / ((*nb)[i] * (*nb)[i]);
                           for (std::size_t k = 0; k < d; ++k)
                             gb[i * d + k] += g * (x[i * d + k] * inv - cb * y[i * d + k]);
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", Shape{}, {total}, {a}, [](Node& self) {
    auto g = grad_of(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return make_result("mean_rows", Shape{1, n}, std::move(out), {a}, [m, n](Node& self) {
    auto g = grad_of(self, 0);
    const double w = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * w;
  });
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) {
    throw DimensionError("pick: index " + std::to_string(index) + " outside " +
                         shape_string(a.shape()));
  }
  return make_result("pick", Shape{}, {a[index]}, {a}, [index](Node& self) {
    grad_of(self, 0)[index] += self.grad[0];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix("slice_rows", a);
  const std::size_t n = a.cols();
  if (count == 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make_result("slice_rows", Shape{count, n}, std::move(out), {a},
                     [start, n](Node& self) {
                       auto g = grad_of(self, 0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[start * n + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix("slice_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + start + j];
  return make_result("slice_cols", Shape{m, count}, std::move(out), {a},
                     [m, n, start, count](Node& self) {
                       auto g = grad_of(self, 0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < count; ++j)
                           g[i * n + start + j] += self.grad[i * count + j];
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_matrix("gather_rows", a);
  const std::size_t n = a.cols();
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  std::vector<double> out;
  out.reserve(indices.size() * n);
  for (std::size_t idx : indices) {
    if (idx >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx) + " outside " +
                           shape_string(a.shape()));
    }
    auto row = a.data().subspan(idx * n, n);
    out.insert(out.end(), row.begin(), row.end());
  }
  std::vector<std::size_t> saved(indices.begin(), indices.end());
  return make_result("gather_rows", Shape{indices.size(), n}, std::move(out), {a},
                     [saved, n](Node& self) {
                       auto g = grad_of(self, 0);
                       for (std::size_t r = 0; r < saved.size(); ++r)
                         for (std::size_t j = 0; j < n; ++j)
                           g[saved[r] * n + j] += self.grad[r * n + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Tensor& t : parts) {
    require_matrix("concat_rows", t);
    if (t.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(t.shape()));
    }
    m += t.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::size_t> offsets;
  for (const Tensor& t : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return make_result("concat_rows", Shape{m, n}, std::move(out), parts,
                     [offsets](Node& self) {
                       for (std::size_t p = 0; p < offsets.size(); ++p) {
                         if (!wants(self, p)) continue;
                         auto g = grad_of(self, p);
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[offsets[p] + i];
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths, offsets;
  std::size_t n = 0;
  for (const Tensor& t : parts) {
    require_matrix("concat_cols", t);
    if (t.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(t.shape()));
    }
    offsets.push_back(n);
    widths.push_back(t.cols());
    n += t.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j)
        out[i * n + offsets[p] + j] = parts[p][i * widths[p] + j];
  return make_result("concat_cols", Shape{m, n}, std::move(out), parts,
                     [m, n, widths, offsets](Node& self) {
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         if (!wants(self, p)) continue;
                         auto g = grad_of(self, p);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < widths[p]; ++j)
                             g[i * widths[p] + j] += self.grad[i * n + offsets[p] + j];
                       }
                     });
}

std::vector<double> row_responses(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a[i * n + j] * a[i * n + j];
  return out;
}

std::pair<Tensor, std::vector<std::size_t>> topk_rows(const Tensor& a, std::size_t k) {
  if (k < 1 || k > a.rows()) {
    throw std::out_of_range("topk_rows: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(a.rows()) + "]");
  }
  const auto responses = row_responses(a);
  std::vector<std::size_t> order(a.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return responses[l] > responses[r];
  });
  order.resize(k);
  Tensor rows = gather_rows(a.rank() == 2 ? a : a.reshape(Shape{1, a.cols()}), order);
  return {rows, order};
}

Tensor dct_basis(std::size_t n) {
  if (n == 0) throw DimensionError("dct_basis: empty length");
  std::vector<double> basis(n * n);
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
    for (std::size_t i = 0; i < n; ++i)
      basis[k * n + i] =
          s * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                       static_cast<double>(k) / (2.0 * dn));
  }
  return Tensor(Shape{n, n}, std::move(basis));
}

Tensor dct_channels(const Tensor& a) {
  require_matrix("dct_channels", a);
  return matmul(a, transpose(dct_basis(a.cols())));
}

Tensor idct_channels(const Tensor& a, std::size_t d) {
  require_matrix("idct_channels", a);
  const std::size_t keep = a.cols();
  if (keep > d) {
    throw std::invalid_argument("idct_channels: invalid truncation, " + std::to_string(keep) +
                                " coefficients exceed length " + std::to_string(d));
  }
  Tensor basis = dct_basis(d);
  if (keep < d) basis = slice_rows(basis, 0, keep);
  return matmul(a, basis);
}

Tensor rbf_row_affinity(const Tensor& a, double beta) {
  require_matrix("rbf_row_affinity", a);
  const std::size_t k = a.rows(), n = a.cols();
  std::vector<double> out(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i * k + i] = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double diff = a[i * n + c] - a[j * n + c];
        dist += diff * diff;
      }
      out[i * k + j] = out[j * k + i] = std::exp(-beta * dist);
    }
  }
  return make_result("rbf_row_affinity", Shape{k, k}, std::move(out), {a},
                     [k, n, beta](Node& self) {
                       auto g = grad_of(self, 0);
                       const auto& x = data_of(self, 0);
                       for (std::size_t i = 0; i < k; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           if (i == j) continue;
                           const double w = (self.grad[i * k + j] + self.grad[j * k + i]) *
                                            self.data[i * k + j] * (-2.0 * beta);
                           if (w == 0.0) continue;
                           // Pair (i, j) contributes to row i only here; row j gets
                           // its share when the loop reaches (j, i).
                           for (std::size_t c = 0; c < n; ++c)
                             g[i * n + c] += w * (x[i * n + c] - x[j * n + c]);
                         }
                     });
}

Tensor sym_normalize(const Tensor& a) {
  require_matrix("sym_normalize", a);
  const std::size_t k = a.rows();
  if (a.cols() != k) {
    throw DimensionError("sym_normalize: adjacency must be square, got " +
                         shape_string(a.shape()));
  }
  auto inv_sqrt = std::make_shared<std::vector<double>>(k);
  for (std::size_t i = 0; i < k; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < k; ++j) degree += a[i * k + j];
    if (!(degree > 0.0)) {
      throw NumericError("sym_normalize: non-positive degree at row " + std::to_string(i));
    }
    (*inv_sqrt)[i] = 1.0 / std::sqrt(degree);
  }
  std::vector<double> out(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out[i * k + j] = a[i * k + j] * (*inv_sqrt)[i] * (*inv_sqrt)[j];
  return make_result("sym_normalize", Shape{k, k}, std::move(out), {a},
                     [k, inv_sqrt](Node& self) {
                       auto g = grad_of(self, 0);
                       const auto& adj = data_of(self, 0);
                       const auto& s = *inv_sqrt;
                       // d(out_kl)/d(degree_i) = -1/2 * out_kl / degree_i for k == i or l == i.
                       std::vector<double> g_degree(k, 0.0);
                       for (std::size_t i = 0; i < k; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           const double t = self.grad[i * k + j] * adj[i * k + j] * s[i] * s[j];
                           g_degree[i] += t;
                           g_degree[j] += t;
                         }
                       for (std::size_t i = 0; i < k; ++i) g_degree[i] *= -0.5 * s[i] * s[i];
                       for (std::size_t i = 0; i < k; ++i)
                         for (std::size_t j = 0; j < k; ++j)
                           g[i * k + j] += self.grad[i * k + j] * s[i] * s[j] + g_degree[i];
                     });
}

}  // namespace isp
