#include "rmoe/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

void validate_attack_config(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0))
    throw std::invalid_argument("attack: epsilon must be >= 0");
  if (cfg.steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
  // A zero budget is a no-op attack; only a real budget needs a step size.
  if (cfg.epsilon > 0.0) {
    if (!(cfg.step_size > 0.0))
      throw std::invalid_argument("attack: step_size must be > 0");
    if (cfg.step_size > 2.0 * cfg.epsilon)
      throw std::invalid_argument("attack: step_size must be <= 2*epsilon");
  }
  if (cfg.restarts < 1)
    throw std::invalid_argument("attack: restarts must be >= 1");
  if (cfg.clamp && !(cfg.clamp->first < cfg.clamp->second))
    throw std::invalid_argument("attack: clamp box is empty");
}

double default_step_size(double epsilon) { return epsilon / 4.0; }

void project_linf(std::span<double> delta, std::span<const double> x,
                  double epsilon,
                  const std::optional<std::pair<double, double>>& clamp) {
  if (delta.size() != x.size())
    throw std::invalid_argument("project_linf: size mismatch");
  for (std::size_t i = 0; i < delta.size(); ++i) {
    double lo = -epsilon, hi = epsilon;
    if (clamp) {
      lo = std::max(lo, clamp->first - x[i]);
      hi = std::min(hi, clamp->second - x[i]);
    }
    delta[i] = std::clamp(delta[i], lo, hi);
  }
}

namespace {

// Loss of the graph built at x + delta, plus the input gradient when asked.
double eval_loss(const AttackLossFn& loss_fn, std::span<const double> x,
                 const std::vector<double>& delta, std::vector<double>* grad) {
  std::vector<double> xp(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + delta[i];
  if (grad == nullptr) {
    Tensor loss = loss_fn(Tensor::constant({x.size()}, std::move(xp)));
    return loss.item();
  }
  Tape tape;
  Tensor leaf = tape.var({x.size()}, std::move(xp));
  Tensor loss = loss_fn(leaf);
  if (loss.size() != 1)
    throw std::invalid_argument("pgd: attack loss must be scalar");
  tape.backward(loss);
  grad->assign(leaf.grad().begin(), leaf.grad().end());
  return loss.item();
}

}  // namespace

PgdResult pgd(const AttackLossFn& loss_fn, const Tensor& x,
              const AttackConfig& cfg, const StepObserver& observer) {
  validate_attack_config(cfg);
  if (x.rank() != 1) throw std::invalid_argument("pgd: x must be rank 1");
  const std::size_t d = x.size();
  const auto xv = x.values();

  PgdResult result;
  result.delta = Tensor::zeros({d});
  if (cfg.epsilon == 0.0) {
    // Empty ball; the clean point is the only feasible candidate.
    result.loss = eval_loss(loss_fn, xv, std::vector<double>(d, 0.0), nullptr);
    return result;
  }

  bool have_best = false;
  double best_loss = 0.0;
  std::vector<double> best_delta;
  auto consider = [&](const std::vector<double>& delta, double loss) {
    if (!have_best || loss > best_loss) {
      have_best = true;
      best_loss = loss;
      best_delta = delta;
    }
  };

  int aborted = 0;
  std::vector<double> grad;
  for (int r = 0; r < cfg.restarts; ++r) {
    std::vector<double> delta(d, 0.0);
    if (!(r == 0 && cfg.zero_init_first_restart)) {
      Rng rng(derive_seed(cfg.seed, "attack",
                          static_cast<std::uint64_t>(r)));
      delta = rng.uniform_vector(d, -cfg.epsilon, cfg.epsilon);
    }
    project_linf(delta, xv, cfg.epsilon, cfg.clamp);
    if (observer) observer(r, 0, delta);

    try {
      double loss = eval_loss(loss_fn, xv, delta, cfg.steps > 0 ? &grad : nullptr);
      if (!std::isfinite(loss)) throw std::runtime_error("pgd: non-finite loss");
      consider(delta, loss);  // the initial iterate is a candidate
      for (int k = 1; k <= cfg.steps; ++k) {
        for (std::size_t i = 0; i < d; ++i) {
          const double g = grad[i];
          const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
          delta[i] += cfg.step_size * s;
        }
        project_linf(delta, xv, cfg.epsilon, cfg.clamp);
        if (observer) observer(r, k, delta);
        loss = eval_loss(loss_fn, xv, delta, k < cfg.steps ? &grad : nullptr);
        if (!std::isfinite(loss))
          throw std::runtime_error("pgd: non-finite loss");
        if (k == cfg.steps) consider(delta, loss);  // the final iterate
      }
    } catch (const std::runtime_error&) {
      ++aborted;  // numeric failure inside this restart; drop it
      continue;
    }
  }

  if (!have_best)
    throw std::runtime_error("pgd: every restart aborted on non-finite loss");
  result.delta = Tensor::constant({d}, std::move(best_delta));
  result.loss = best_loss;
  result.aborted_restarts = aborted;
  return result;
}

Tensor attack_loss(const MoEModel& m, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view, int y) {
  return ce_loss(moe_forward(m, x_clean, x_pert, view), y);
}

Tensor attack_loss(const DualModel& dm, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view, int y,
                   DualTarget target) {
  return ce_loss(dual_forward(dm, x_clean, x_pert, view, target), y);
}

AttackLossFn make_attack_loss(const MoEModel& m, Tensor x_clean,
                              ForwardView view, int y) {
  return [&m, x_clean, view, y](const Tensor& x_pert) {
    return attack_loss(m, x_clean, x_pert, view, y);
  };
}

AttackLossFn make_attack_loss(const DualModel& dm, Tensor x_clean,
                              ForwardView view, int y, DualTarget target) {
  return [&dm, x_clean, view, y, target](const Tensor& x_pert) {
    return attack_loss(dm, x_clean, x_pert, view, y, target);
  };
}

}  // namespace rmoe
