#pragma once

#include "rmoe/nn.hpp"
#include "rmoe/tensor.hpp"

namespace rmoe {

// Largest singular value by power iteration on W^T W. Deterministic: the
// start vector comes from a fixed internal seed, iteration stops when the
// estimate moves by <= tol * sigma or after max_iters rounds. A zero matrix
// returns exactly 0.
double spectral_norm(const Tensor& W, int max_iters = 200, double tol = 1e-8);

enum class LipNorm { kL2 };

// Upper bound on the l2->l2 Lipschitz constant of the full MLP map
// (probabilities out): product of per-layer spectral norms, times 1 for each
// ReLU and 1/2 for the softmax head (the softmax Jacobian diag(p) - pp^T has
// operator norm <= 1/2, tight at p = (1/2, 1/2)).
double mlp_lipschitz_upper(const Mlp& m, LipNorm norm = LipNorm::kL2);

}  // namespace rmoe
