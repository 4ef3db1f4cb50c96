#pragma once

#include <cstdint>
#include <vector>

#include "rmoe/nn.hpp"
#include "rmoe/tensor.hpp"

namespace rmoe {

// Routing policy. TopK keeps the k largest softmax weights (ties toward the
// lowest expert index), zeroes the rest and renormalizes to sum 1; Dense
// keeps the full softmax.
struct Routing {
  enum class Kind { kTopK, kDense };
  Kind kind = Kind::kTopK;
  int k = 1;

  static Routing top_k(int k) { return {Kind::kTopK, k}; }
  static Routing dense() { return {Kind::kDense, 0}; }
  bool is_dense() const { return kind == Kind::kDense; }
};

// Mixture of experts classifier: a linear-softmax router over E expert MLPs
// whose softmax outputs are combined as F(x) = sum_i a_i(x) f_i(x).
struct MoEModel {
  LinearLayer router;       // {E, d}
  std::vector<Mlp> experts; // E of them, each d -> c
  Routing routing;

  std::size_t in_dim() const { return router.in_dim(); }
  std::size_t class_count() const { return experts.front().out_dim(); }
  int expert_count() const { return static_cast<int>(experts.size()); }
};

// Which inputs each component sees during a forward pass. Full perturbs
// everything; RouterTarget perturbs only what the router sees; ExpertTarget
// perturbs only what the experts see; Smooth perturbs everything but uses
// the dense softmax weights with no top-k truncation.
enum class ForwardView { kFull, kRouterTarget, kExpertTarget, kSmooth };

// Convex combination of a standard and a robust mixture:
// F_D = (1 - alpha) F_S + alpha F_R, alpha in [0.5, 1].
struct DualModel {
  MoEModel standard;
  MoEModel robust;
  double alpha = 0.7;
};

// For attacks that perturb only one sub-model's input; the other sub-model
// receives the clean input.
enum class DualTarget { kBothSubmodels, kRobustSubmodel, kStandardSubmodel };

void validate_moe(const MoEModel& m);
void validate_dual(const DualModel& dm);

MoEModel make_moe(std::size_t in_dim, std::size_t classes, int experts,
                  const std::vector<std::size_t>& hidden, Routing routing,
                  std::uint64_t seed);
DualModel make_dual(MoEModel standard, MoEModel robust, double alpha);

// Routing weights for one input {d} -> {E} or a batch {n,d} -> {n,E}.
// Rows are simplex vectors. Under TopK the selection mask is computed from
// values (straight-through): gradients flow through the renormalized softmax
// weights, never through the selection itself. A zero-weight router yields
// uniform weights before top-k, so TopK(1) selects expert 0 with weight 1.
Tensor route(const MoEModel& m, const Tensor& x);
// Dense softmax weights regardless of the routing policy (the Smooth view).
Tensor route_dense(const MoEModel& m, const Tensor& x);

// F under a view; x_clean and x_pert are both {d} or both {n,d}. Output rows
// are probability vectors.
Tensor moe_forward(const MoEModel& m, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view);

Tensor dual_forward(const DualModel& dm, const Tensor& x_clean,
                    const Tensor& x_pert, ForwardView view,
                    DualTarget target = DualTarget::kBothSubmodels);

// The expert ranked k+1 by router softmax on x_pert (the best expert not
// selected by TopK(k)); ties toward the lowest index. Requires TopK routing
// with k < E.
int second_top_expert(const MoEModel& m, const Tensor& x_pert);

// F^(y) - max_{k != y} F^(k) for one probability row.
double margin(std::span<const double> probs, int y);

template <typename Fn>
void for_each_param(MoEModel& m, Fn&& fn) {
  fn(m.router.W);
  fn(m.router.b);
  for (auto& e : m.experts) for_each_param(e, fn);
}

template <typename Fn>
void for_each_param(DualModel& dm, Fn&& fn) {
  for_each_param(dm.standard, fn);
  for_each_param(dm.robust, fn);
}

// Structure copy whose parameters are fresh leaves on `tape`; `pairs` maps
// each original parameter to its taped leaf so an optimizer can read grads
// and write updates back.
MoEModel bind_params(MoEModel& m, Tape& tape,
                     std::vector<std::pair<Tensor, Tensor>>& pairs);

// p -= lr * grad for every (original, leaf) pair.
void sgd_step(std::vector<std::pair<Tensor, Tensor>>& pairs, double lr);

}  // namespace rmoe
