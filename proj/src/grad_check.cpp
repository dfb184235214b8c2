#include "isp/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace isp {

double max_relative_error(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("max_relative_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

namespace {

double evaluate(const std::string& name, const std::function<Tensor()>& f) {
  const double value = f().item();
  if (!std::isfinite(value)) throw NumericError(name + ": objective is not finite");
  return value;
}

}  // namespace

GradReport grad_check(const std::string& op_name, const std::function<Tensor()>& f,
                      std::vector<Tensor> params, double step) {
  for (Tensor& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw std::invalid_argument(op_name + ": grad_check parameters must be leaves with "
                                            "requires_grad");
    }
    p.zero_grad();
  }
  GradReport report;
  report.op_name = op_name;

  Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError(op_name + ": objective is not finite");
  out.backward();
  for (const Tensor& p : params) {
    auto g = p.grad();
    report.analytic.insert(report.analytic.end(), g.begin(), g.end());
  }

  for (Tensor& p : params) {
    auto values = p.mutable_data();
    for (double& v : values) {
      const double original = v;
      v = original + step;
      const double up = evaluate(op_name, f);
      v = original - step;
      const double down = evaluate(op_name, f);
      v = original;
      report.numeric.push_back((up - down) / (2.0 * step));
    }
    p.zero_grad();
  }
  report.max_rel_err = max_relative_error(report.analytic, report.numeric);
  return report;
}

GradReport grad_check(const std::string& op_name,
                      const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double step) {
  Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  return grad_check(
      op_name, [&] { return f(leaf); }, {leaf}, step);
}

}  // namespace isp
