#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "isp/grad_check.hpp"
#include "isp/ops.hpp"
#include "isp/tensor.hpp"
#include "test_util.hpp"

namespace isp {
namespace {

using test::expect_values;
using test::max_abs_diff;
using test::random_matrix;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({0, 3}, {}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_THROW(t.at(2, 0), DimensionError);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor::vector({1.0, std::nan("")}), NumericError);
  EXPECT_THROW(Tensor::scalar(INFINITY), NumericError);
}

TEST(Tensor, OperationsRefuseToProduceNonFiniteValues) {
  Tensor big = Tensor::vector({1e200});
  try {
    mul(big, big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Tensor, GradientAccumulatesAcrossBackwardCalls) {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  expect_values(Tensor::vector(x.grad()), {4.0, 8.0});
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
  Tensor x = Tensor::vector({3.0}, true);
  Tensor y = add(x, x);
  sum(mul(y, x)).backward();  // 2x^2 -> 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, BackwardNeedsSingleElement) {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  EXPECT_THROW(x.backward(), DimensionError);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  Tensor x = Tensor::vector({1.0}, true);
  EXPECT_NO_THROW(x.mutable_data());
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), std::logic_error);
}

TEST(Matmul, IdentityAndSelector) {
  Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  expect_values(matmul(id, m), {1, 2, 3, 4});
  Tensor sel = Tensor::matrix({{1, 0}, {0, 0}});
  expect_values(matmul(sel, Tensor::matrix({{5, 6}, {7, 8}})), {5, 6, 0, 0});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = random_matrix(rng, 3, 4, 1.0, true);
  Tensor b = random_matrix(rng, 4, 2, 1.0, true);
  GradReport r = grad_check("matmul", [&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LE(r.max_rel_err, 1e-6);
}

TEST(Softmax, Examples) {
  expect_values(softmax_rows(Tensor::matrix({{0, 0, 0}})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_values(softmax_rows(Tensor::matrix({{1000, 1000}})), {0.5, 0.5});
  expect_values(softmax_rows(Tensor::matrix({{0, std::log(3.0)}})), {0.25, 0.75});
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_matrix(rng, 3, 7, 5.0);
    Tensor p = softmax_rows(a);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(p.at(r, c), 0.0);
        total += p.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    Tensor shifted = add(a, Tensor::full({3, 7}, 123.456));
    EXPECT_LE(max_abs_diff(softmax_rows(shifted), p), 1e-12);
  }
}

TEST(LogSoftmax, MatchesLogOfSoftmax) {
  std::mt19937_64 rng(3);
  Tensor a = random_matrix(rng, 2, 5);
  Tensor p = softmax_rows(a), lp = log_softmax_rows(a);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(std::log(p[i]), lp[i], 1e-12);
}

TEST(LayerNorm, Examples) {
  Tensor one = Tensor::full({3}, 1.0), zero = Tensor::zeros({3});
  expect_values(layer_norm(Tensor::vector({5, 5, 5}), one, zero), {0, 0, 0});
  Tensor pair = layer_norm(Tensor::vector({1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  expect_values(pair, {expected, -expected});
  EXPECT_NEAR(pair[0], 1.0, 1e-5);
  Tensor bias = Tensor::vector({0.5, -2.0, 3.0});
  expect_values(layer_norm(Tensor::matrix({{1, 7, -3}, {2, 2, 9}}), Tensor::zeros({3}), bias),
                {0.5, -2.0, 3.0, 0.5, -2.0, 3.0});
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(4);
  Tensor a = random_matrix(rng, 4, 16, 3.0);
  Tensor out = layer_norm(a, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += out.at(r, c) / 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += (out.at(r, c) - mean) * (out.at(r, c) - mean) / 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(Cosine, Examples) {
  expect_values(cosine_rows(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{1, 0}, {0, 1}})),
                {1, 0, 0, 1});
  expect_values(cosine_rows(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})), {0});
  expect_values(cosine_rows(Tensor::matrix({{1, 1}}), Tensor::matrix({{2, 2}})), {1});
}

TEST(Cosine, ZeroRowIsAnErrorNamingTheRow) {
  try {
    cosine_rows(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{1, 1}}));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(Cosine, BoundedAndScaleInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> positive(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_matrix(rng, 3, 6), b = random_matrix(rng, 4, 6);
    Tensor c = cosine_rows(a, b);
    for (double v : c.data()) {
      EXPECT_GE(v, -1.0 - 1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_LE(max_abs_diff(cosine_rows(scale(a, positive(rng)), b), c), 1e-12);
  }
}

TEST(TopK, Examples) {
  auto [rows, idx] = topk_rows(Tensor::matrix({{1, 2}, {3, 0}, {0, 0}}), 2);
  EXPECT_EQ(idx, (std::vector<std::size_t>{1, 0}));
  expect_values(rows, {3, 0, 1, 2});

  auto [all, all_idx] = topk_rows(Tensor::matrix({{1, 0}, {0, 3}, {2, 0}}), 3);
  EXPECT_EQ(all_idx, (std::vector<std::size_t>{1, 2, 0}));

  auto [tie, tie_idx] = topk_rows(Tensor::matrix({{0, 0}, {1, 1}, {1, 1}}), 1);
  EXPECT_EQ(tie_idx, (std::vector<std::size_t>{1}));
}

TEST(TopK, KOutOfRange) {
  Tensor a = Tensor::zeros({3, 2});
  EXPECT_THROW(topk_rows(a, 0), std::out_of_range);
  EXPECT_THROW(topk_rows(a, 4), std::out_of_range);
}

TEST(TopK, MatchesBruteForceSort) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor a = random_matrix(rng, 10, 4);
    std::vector<double> resp(10);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 4; ++c) resp[r] += a.at(r, c) * a.at(r, c);
    std::vector<std::size_t> order(10);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return resp[i] > resp[j] || (resp[i] == resp[j] && i < j);
    });
    order.resize(4);
    EXPECT_EQ(topk_rows(a, 4).second, order);
  }
}

TEST(GradCheck, Quadratic) {
  GradReport r = grad_check("square", [](const Tensor& x) { return sum(mul(x, x)); },
                            Tensor::vector({1, 2, 3}));
  expect_values(Tensor::vector(r.analytic), {2, 4, 6});
  EXPECT_LE(r.max_rel_err, 1e-7);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  GradReport r = grad_check(
      "ce", [](const Tensor& x) { return scale(pick(log_softmax_rows(x), 1), -1.0); },
      Tensor::matrix({{0.3, -1.2, 0.8, 2.0}}));
  EXPECT_LE(r.max_rel_err, 1e-5);
}

TEST(GradCheck, ReportsDisagreement) {
  EXPECT_NEAR(max_relative_error({1.0, 2.0}, {1.0, 2.2}), 0.2 / 2.2, 1e-15);
  EXPECT_EQ(max_relative_error({0.0}, {1e-12}), 1e-12 / 1e-8);
}

TEST(GradCheck, NonFiniteFunctionIsAnError) {
  EXPECT_THROW(grad_check("blowup", [](const Tensor& x) { return sum(mul(x, x)); },
                          Tensor::vector({1e200})),
               NumericError);
}

TEST(GradCheck, EveryBuildingBlockOp) {
  std::mt19937_64 rng(7);
  Tensor a = random_matrix(rng, 3, 4, 1.0, true), b = random_matrix(rng, 3, 4, 1.0, true);
  Tensor bias = random_matrix(rng, 1, 4, 1.0, true);
  Tensor w34 = random_matrix(rng, 3, 4), w43 = random_matrix(rng, 4, 3);
  Tensor w14 = random_matrix(rng, 1, 4), w24 = random_matrix(rng, 2, 4);
  Tensor w32 = random_matrix(rng, 3, 2), w38 = random_matrix(rng, 3, 8);
  Tensor w64 = random_matrix(rng, 6, 4), w12 = random_matrix(rng, 12, 1);
  const std::vector<std::size_t> picks{2, 0};
  const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
      {"add", [&] { return sum(mul(add(a, b), w34)); }},
      {"sub", [&] { return sum(mul(sub(a, b), w34)); }},
      {"mul", [&] { return sum(mul(mul(a, b), w34)); }},
      {"scale", [&] { return sum(mul(scale(a, -1.7), w34)); }},
      {"add_row", [&] { return sum(mul(add_row(a, bias), w34)); }},
      {"transpose", [&] { return sum(mul(transpose(a), w43)); }},
      {"relu", [&] { return sum(mul(relu(a), w34)); }},
      {"gelu", [&] { return sum(mul(gelu(a), w34)); }},
      {"mean", [&] { return mean(mul(a, b)); }},
      {"mean_rows", [&] { return sum(mul(mean_rows(a), w14)); }},
      {"pick", [&] { return mul(pick(a, 5), pick(b, 7)); }},
      {"slice_rows", [&] { return sum(mul(slice_rows(a, 1, 2), w24)); }},
      {"slice_cols", [&] { return sum(mul(slice_cols(a, 1, 2), w32)); }},
      {"gather_rows", [&] { return sum(mul(gather_rows(a, picks), w24)); }},
      {"concat_rows", [&] { return sum(mul(concat_rows({a, b}), w64)); }},
      {"concat_cols", [&] { return sum(mul(concat_cols({a, b}), w38)); }},
      {"reshape", [&] { return sum(mul(a.reshape({12, 1}), w12)); }},
      {"paired_cosine", [&] { return sum(mul(paired_cosine(a, b), Tensor::vector({0.3, -1.1, 0.7}))); }},
      {"log_softmax", [&] { return sum(mul(log_softmax_rows(a), w34)); }},
  };
  for (const auto& [name, f] : cases) {
    GradReport r = grad_check(name, f, {a, b, bias});
    EXPECT_LE(r.max_rel_err, 1e-6) << name;
  }
}

}  // namespace
}  // namespace isp
