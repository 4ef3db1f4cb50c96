#include "rmoe/moe.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

// Expert indices ordered by (weight desc, index asc); the deterministic
// ranking used by top-k selection and second_top_expert.
std::vector<int> ranked_experts(std::span<const double> weights) {
  std::vector<int> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return weights[a] > weights[b]; });
  return order;
}

// {n,E} 0/1 mask keeping the top k entries of each row.
Tensor top_k_mask(const Tensor& weights, int k) {
  const std::size_t n = weights.rows(), e = weights.cols();
  std::vector<double> mask(n * e, 0.0);
  const auto wv = weights.values();
  for (std::size_t r = 0; r < n; ++r) {
    const auto order = ranked_experts(wv.subspan(r * e, e));
    for (int i = 0; i < k; ++i) mask[r * e + order[i]] = 1.0;
  }
  return Tensor::constant({n, e}, std::move(mask));
}

Tensor as_matrix(const Tensor& x) {
  return x.rank() == 1 ? reshape(x, {1, x.size()}) : x;
}

// {E,c} selector with row `expert` all ones; matmul(A, sel) broadcasts
// column `expert` of A across c output columns.
Tensor expert_selector(std::size_t experts, std::size_t classes,
                       std::size_t expert) {
  std::vector<double> v(experts * classes, 0.0);
  for (std::size_t j = 0; j < classes; ++j) v[expert * classes + j] = 1.0;
  return Tensor::constant({experts, classes}, std::move(v));
}

}  // namespace

void validate_moe(const MoEModel& m) {
  validate_linear(m.router);
  if (m.experts.size() < 2)
    throw std::invalid_argument("moe: need at least 2 experts");
  if (m.router.out_dim() != m.experts.size())
    throw std::invalid_argument("moe: router width != expert count");
  for (const auto& e : m.experts) {
    validate_mlp(e);
    if (e.in_dim() != m.in_dim() || e.out_dim() != m.class_count())
      throw std::invalid_argument("moe: expert dimensions disagree");
  }
  if (!m.routing.is_dense()) {
    if (m.routing.k < 1 || m.routing.k > m.expert_count())
      throw std::invalid_argument("moe: top-k outside [1, E]");
  }
}

MoEModel make_moe(std::size_t in_dim, std::size_t classes, int experts,
                  const std::vector<std::size_t>& hidden, Routing routing,
                  std::uint64_t seed) {
  MoEModel m;
  m.routing = routing;
  m.router = make_linear(static_cast<std::size_t>(experts), in_dim,
                         derive_seed(seed, "init", 0));
  std::vector<std::size_t> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  for (int e = 0; e < experts; ++e)
    m.experts.push_back(
        make_mlp(dims, derive_seed(seed, "init", 1 + static_cast<std::uint64_t>(e))));
  validate_moe(m);
  return m;
}

void validate_dual(const DualModel& dm) {
  validate_moe(dm.standard);
  validate_moe(dm.robust);
  if (dm.standard.in_dim() != dm.robust.in_dim() ||
      dm.standard.class_count() != dm.robust.class_count())
    throw std::invalid_argument("dual: sub-model dimensions disagree");
  if (!(dm.alpha >= 0.5 && dm.alpha <= 1.0))
    throw std::invalid_argument("dual: alpha must be in [0.5, 1]");
}

DualModel make_dual(MoEModel standard, MoEModel robust, double alpha) {
  DualModel dm{std::move(standard), std::move(robust), alpha};
  validate_dual(dm);
  return dm;
}

Tensor route_dense(const MoEModel& m, const Tensor& x) {
  validate_moe(m);
  const bool vec = x.rank() == 1;
  Tensor logits = linear_forward(m.router, as_matrix(x));
  Tensor w = softmax_lastdim(logits);
  return vec ? reshape(w, {w.cols()}) : w;
}

Tensor route(const MoEModel& m, const Tensor& x) {
  Tensor dense = route_dense(m, x);
  if (m.routing.is_dense()) return dense;
  const bool vec = x.rank() == 1;
  Tensor w = as_matrix(dense);
  if (m.routing.k == m.expert_count()) return dense;  // mask keeps everything
  Tensor masked = mul(w, top_k_mask(w, m.routing.k));
  // Renormalize each row to a simplex: divide by the kept mass.
  Tensor inv = reciprocal(row_sum(masked));
  Tensor out = mul(masked, matmul(inv, ones({1, w.cols()})));
  return vec ? reshape(out, {out.cols()}) : out;
}

Tensor moe_forward(const MoEModel& m, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view) {
  validate_moe(m);
  if (x_clean.shape() != x_pert.shape())
    throw std::invalid_argument("moe_forward: clean/pert shapes differ");
  const bool vec = x_clean.rank() == 1;
  Tensor xc = as_matrix(x_clean), xp = as_matrix(x_pert);
  if (xc.cols() != m.in_dim())
    throw std::invalid_argument("moe_forward: input width mismatch");

  Tensor weights;
  const Tensor* expert_input = &xp;
  switch (view) {
    case ForwardView::kFull:
      weights = route(m, xp);
      break;
    case ForwardView::kRouterTarget:
      weights = route(m, xp);
      expert_input = &xc;
      break;
    case ForwardView::kExpertTarget:
      weights = route(m, xc);
      break;
    case ForwardView::kSmooth:
      weights = route_dense(m, xp);
      break;
  }

  const std::size_t c = m.class_count();
  const std::size_t e_count = m.experts.size();
  Tensor out;
  for (std::size_t e = 0; e < e_count; ++e) {
    Tensor scale = matmul(weights, expert_selector(e_count, c, e));
    Tensor term = mul(scale, mlp_forward(m.experts[e], *expert_input));
    out = out.defined() ? add(out, term) : term;
  }
  return vec ? reshape(out, {c}) : out;
}

Tensor dual_forward(const DualModel& dm, const Tensor& x_clean,
                    const Tensor& x_pert, ForwardView view, DualTarget target) {
  if (!(dm.alpha >= 0.5 && dm.alpha <= 1.0))
    throw std::invalid_argument("dual: alpha must be in [0.5, 1]");
  const Tensor& xs =
      target == DualTarget::kRobustSubmodel ? x_clean : x_pert;
  const Tensor& xr =
      target == DualTarget::kStandardSubmodel ? x_clean : x_pert;
  Tensor fs = moe_forward(dm.standard, x_clean, xs, view);
  Tensor fr = moe_forward(dm.robust, x_clean, xr, view);
  return add(scalar_mul(fs, 1.0 - dm.alpha), scalar_mul(fr, dm.alpha));
}

int second_top_expert(const MoEModel& m, const Tensor& x_pert) {
  validate_moe(m);
  if (m.routing.is_dense())
    throw std::invalid_argument(
        "second_top_expert: undefined for dense routing");
  if (m.routing.k >= m.expert_count())
    throw std::invalid_argument(
        "second_top_expert: top-k already selects every expert");
  Tensor w = route_dense(m, x_pert);
  if (w.rank() != 1)
    throw std::invalid_argument("second_top_expert: one example at a time");
  return ranked_experts(w.values())[static_cast<std::size_t>(m.routing.k)];
}

double margin(std::span<const double> probs, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= probs.size())
    throw std::invalid_argument("margin: label out of range");
  double best_other = -1.0;
  for (std::size_t k = 0; k < probs.size(); ++k)
    if (static_cast<int>(k) != y) best_other = std::max(best_other, probs[k]);
  return probs[static_cast<std::size_t>(y)] - best_other;
}

MoEModel bind_params(MoEModel& m, Tape& tape,
                     std::vector<std::pair<Tensor, Tensor>>& pairs) {
  MoEModel bound = m;  // shares parameter storage until rebinding below
  for_each_param(bound, [&](Tensor& p) {
    Tensor leaf = tape.var_like(p);
    pairs.emplace_back(p, leaf);
    p = leaf;
  });
  return bound;
}

void sgd_step(std::vector<std::pair<Tensor, Tensor>>& pairs, double lr) {
  for (auto& [param, leaf] : pairs) {
    auto p = param.mutable_values();
    const auto g = leaf.grad();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

}  // namespace rmoe
