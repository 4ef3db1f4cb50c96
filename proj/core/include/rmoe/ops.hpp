#pragma once

#include <span>
#include <vector>

#include "rmoe/tensor.hpp"

namespace rmoe {

// Probability floor shared by the clamped log in cross-entropy and the KL
// denominator. Keeps every loss finite when a softmax underflows to 0.
inline constexpr double kProbFloor = 1e-12;

// Primitives. Each op checks shapes (std::invalid_argument), computes values,
// rejects non-finite outputs (std::runtime_error), and records a backward
// node when any input requires grad. Supported ranks are 1 and 2; the only
// broadcast is add_bias over the batch dimension.
Tensor matmul(const Tensor& a, const Tensor& b);      // {m,k}x{k,n} -> {m,n}
Tensor transpose(const Tensor& a);                    // {m,n} -> {n,m}
Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);    // {m,n} + {n}, row-wise
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor reciprocal(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);              // rows of {m,n}, or {n}
Tensor log(const Tensor& x);
Tensor log_floored(const Tensor& x, double floor = kProbFloor);
Tensor sum(const Tensor& x);                          // all elements -> {1}
Tensor mean(const Tensor& x);                         // all elements -> {1}
Tensor scalar_mul(const Tensor& x, double c);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// Compositions of the primitives above (no backward code of their own).
Tensor neg(const Tensor& x);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor row_sum(const Tensor& x);                      // {m,n} -> {m,1}

// Constant builders.
Tensor ones(std::vector<std::size_t> shape);
Tensor one_hot_rows(std::span<const int> labels, std::size_t classes);

// Mean cross-entropy of probability rows against integer labels,
// -mean_i ln max(p[i][y_i], floor). Accepts {n,c} with n labels or {c} with
// one label.
Tensor ce_loss(const Tensor& probs, std::span<const int> labels);
Tensor ce_loss(const Tensor& probs, int label);

// Per-row KL(p || q) with q (and p inside its own log) floored: {n,c} -> {n,1}.
Tensor kl_rows(const Tensor& p, const Tensor& q);

// Mean over rows of KL(p || q); `row_weight`, when given, scales each row's
// contribution before the mean (used to restrict the sum to selected rows).
Tensor kl_rows_mean(const Tensor& p, const Tensor& q,
                    std::span<const double> row_weight = {});

// Index of the largest entry; ties break toward the lowest index.
int argmax(std::span<const double> v);

}  // namespace rmoe
