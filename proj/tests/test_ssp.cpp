#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "isp/ops.hpp"
#include "isp/ssp.hpp"
#include "test_util.hpp"

namespace isp {
namespace {

using test::expect_values;
using test::max_abs_diff;
using test::random_matrix;

// Class token, `content` rows, then `prompts` rows.
TokenSequence make_sequence(const Tensor& tokens, std::size_t prompts) {
  TokenSequence seq;
  seq.tokens = tokens;
  seq.roles.assign(tokens.rows(), Role::content);
  seq.roles.front() = Role::class_token;
  for (std::size_t i = tokens.rows() - prompts; i < tokens.rows(); ++i) seq.roles[i] = Role::prompt;
  return seq;
}

TEST(SelectTokens, WorkedExample) {
  // Row responses: cls 100, 1, 25, 4, 9, prompt 400.
  Tensor t = Tensor::matrix({{10, 0}, {1, 0}, {3, 4}, {0, 2}, {3, 0}, {20, 0}});
  Tensor picked = ssp::select_tokens(make_sequence(t, 1), 2);
  expect_values(picked, {3, 4, 3, 0});
}

TEST(SelectTokens, TiesGoToTheEarlierRow) {
  Tensor t = Tensor::matrix({{0, 0}, {0, 1}, {1, 0}, {0, -1}});
  expect_values(ssp::select_tokens(make_sequence(t, 0), 2), {0, 1, 1, 0});
}

TEST(SelectTokens, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_matrix(rng, 10, 5);
    TokenSequence seq = make_sequence(t, 2);
    std::vector<std::size_t> order(7);
    std::iota(order.begin(), order.end(), 1);
    auto energy = [&](std::size_t r) {
      double e = 0.0;
      for (std::size_t j = 0; j < 5; ++j) e += t.at(r, j) * t.at(r, j);
      return e;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return energy(a) > energy(b); });
    Tensor picked = ssp::select_tokens(seq, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(picked.at(i, j), t.at(order[i], j));
  }
}

TEST(SelectTokens, TooManyIsAnError) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(ssp::select_tokens(make_sequence(random_matrix(rng, 5, 3), 2), 3),
               std::out_of_range);
}

TEST(SspBlock, ZeroedOutputWeightsLeaveTheResidual) {
  std::mt19937_64 rng(3);
  ssp::Params p = ssp::Params::init(6, 0.3, rng);
  for (Tensor* t : {&p.wo, &p.w2}) std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  Tensor prompts = random_matrix(rng, 3, 6), tokens = random_matrix(rng, 3, 6);
  EXPECT_EQ(max_abs_diff(ssp::refine_prompts(prompts, tokens, p, ssp::Residual::tokens), tokens),
            0.0);
  EXPECT_EQ(max_abs_diff(ssp::refine_prompts(prompts, tokens, p, ssp::Residual::prompts), prompts),
            0.0);
  const Tensor bare = ssp::refine_prompts(prompts, tokens, p, ssp::Residual::none);
  for (double v : bare.data()) EXPECT_EQ(v, 0.0);
}

TEST(SspBlock, AttentionRowsSumToOne) {
  std::mt19937_64 rng(4);
  ssp::Params p = ssp::Params::init(6, 0.3, rng);
  Tensor weights;
  ssp::cross_attend(random_matrix(rng, 4, 6), random_matrix(rng, 5, 6), p, &weights);
  ASSERT_EQ(weights.shape(), (Shape{4, 5}));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GT(weights.at(i, j), 0.0);
      s += weights.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SspBlock, InvariantToKeyOrder) {
  std::mt19937_64 rng(5);
  ssp::Params p = ssp::Params::init(6, 0.3, rng);
  Tensor prompts = random_matrix(rng, 3, 6), tokens = random_matrix(rng, 3, 6);
  const std::vector<std::size_t> perm{2, 0, 1};
  Tensor shuffled = gather_rows(tokens, perm);
  EXPECT_LE(max_abs_diff(ssp::refine_prompts(prompts, tokens, p, ssp::Residual::none),
                         ssp::refine_prompts(prompts, shuffled, p, ssp::Residual::none)),
            1e-12);
}

TEST(SspBlock, ShapeMismatchIsAnError) {
  std::mt19937_64 rng(6);
  ssp::Params p = ssp::Params::init(6, 0.3, rng);
  EXPECT_THROW(ssp::refine_prompts(random_matrix(rng, 3, 6), random_matrix(rng, 2, 6), p),
               DimensionError);
  EXPECT_THROW(ssp::cross_attend(random_matrix(rng, 3, 5), random_matrix(rng, 3, 5), p),
               DimensionError);
}

TEST(SspParams, CountMatchesClosedForm) {
  std::mt19937_64 rng(7);
  for (std::size_t d : {4u, 16u, 32u}) {
    ssp::Params p = ssp::Params::init(d, 0.1, rng);
    std::size_t n = 0;
    NamedTensors named;
    p.append_named(named, "x");
    for (const auto& [name, t] : named) n += t.size();
    EXPECT_EQ(n, 12 * d * d + 9 * d);
    EXPECT_EQ(ssp::Params::count(d), n);
  }
}

TEST(SspResidual, ParsesNames) {
  EXPECT_EQ(ssp::parse_residual("prompts"), ssp::Residual::prompts);
  EXPECT_EQ(ssp::to_string(ssp::Residual::none), "none");
  EXPECT_ANY_THROW(ssp::parse_residual("both"));
}

}  // namespace
}  // namespace isp
