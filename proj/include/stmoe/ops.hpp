#pragma once

#include <cstdint>
#include <vector>

#include "stmoe/tensor.hpp"

namespace stmoe {
namespace ops {

// Elementwise. Shapes must match exactly; there is no implicit broadcasting.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double s);
TensorPtr add_scalar(const TensorPtr& a, double s);
TensorPtr gelu(const TensorPtr& x);

/// [m,k] x [k,n] -> [m,n]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
/// [m,k] x [n,k]^T -> [m,n]
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);
/// x[N,H] + b[H] broadcast over rows.
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b);
/// x[N,H] with row i scaled by s[i]; s is a length-N tensor.
TensorPtr scale_rows(const TensorPtr& x, const TensorPtr& s);

/// Row-stochastic softmax along the last axis, max-subtracted for stability.
TensorPtr softmax_rows(const TensorPtr& x);
/// Softmax over the columns with key_mask[j] == 1; masked columns are exactly
/// zero. A row with no unmasked column comes out all-zero.
TensorPtr masked_softmax_rows(const TensorPtr& x, const std::vector<std::uint8_t>& key_mask);

/// Per-row standardization over the last axis, then affine by gain and bias.
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-12);

/// Inverted dropout with a per-call seed. Caller gates on train mode; p == 0
/// is the identity (no tape node).
TensorPtr dropout(const TensorPtr& x, double p, std::uint64_t seed);

/// out[i] = table[ids[i]]; gradient scatters back into the table rows.
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids);
/// out[ids[i]] += x[i] into a fresh [out_rows, H] tensor; gradient gathers.
TensorPtr scatter_rows(const TensorPtr& x, const std::vector<int>& ids, int out_rows);
/// out[i,j] = x[i, cols[i*k+j]] for j in [0,k).
TensorPtr gather_cols(const TensorPtr& x, const std::vector<int>& cols, int k);
/// out[i] = x[rows[i], cols[i]], a length-M vector.
TensorPtr gather_elems(const TensorPtr& x, const std::vector<int>& rows,
                       const std::vector<int>& cols);

/// Horizontal concatenation of 2-D tensors with equal row counts.
TensorPtr concat_cols(const std::vector<TensorPtr>& xs);
/// Vertical concatenation of 2-D tensors with equal column counts.
TensorPtr concat_rows(const std::vector<TensorPtr>& xs);

TensorPtr sum_all(const TensorPtr& x);
TensorPtr mean_all(const TensorPtr& x);
/// Column means of a 2-D tensor: [N,K] -> [K].
TensorPtr mean_over_rows(const TensorPtr& x);

/// Mean of -log softmax(logits)[target] over rows with ignore[i] == 0.
/// Rows with ignore[i] == 1 contribute nothing. All rows ignored is an error.
TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& ignore);

}  // namespace ops
}  // namespace stmoe
