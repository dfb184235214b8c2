#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "isp/tensor.hpp"

namespace isp {

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kMinRowNorm = 1e-12;

// Elementwise arithmetic. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m x n] + bias[n], bias broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

/// Normalizes every row of a 2-D tensor (or a vector) over its last axis,
/// then applies gain and bias (both of length = last dimension).
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double epsilon = kLayerNormEpsilon);

/// All-pairs cosine similarity between the rows of a [p x d] and b [q x d].
/// Throws NumericError naming the row when a row norm is below 1e-12.
Tensor cosine_rows(const Tensor& a, const Tensor& b);
/// Cosine of matching row pairs, a and b both [m x d]; result is a vector [m].
Tensor paired_cosine(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of a [m x n]; result is [1 x n].
Tensor mean_rows(const Tensor& a);
/// Single element by flat index, as a scalar tensor.
Tensor pick(const Tensor& a, std::size_t index);

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Channel-wise sum of squares of each row.
std::vector<double> row_responses(const Tensor& a);

/// The k rows with the largest sum of squares, in descending response order.
/// Ties go to the lower original index.
std::pair<Tensor, std::vector<std::size_t>> topk_rows(const Tensor& a, std::size_t k);

/// Orthonormal DCT-II basis, row k = frequency k: [n x n].
Tensor dct_basis(std::size_t n);
/// Orthonormal DCT-II along the channel axis of every row.
Tensor dct_channels(const Tensor& a);
/// Orthonormal inverse (DCT-III) of [n x d_keep] coefficients at length d,
/// treating the missing high-frequency coefficients as zero.
Tensor idct_channels(const Tensor& a, std::size_t d);

/// Gaussian kernel over pairwise squared row distances:
/// out[i,j] = exp(-beta * ||a_i - a_j||^2). Exactly symmetric, unit diagonal.
Tensor rbf_row_affinity(const Tensor& a, double beta);

/// Symmetric degree normalization D^-1/2 A D^-1/2 with D_ii = sum_j A_ij.
Tensor sym_normalize(const Tensor& a);

}  // namespace isp
