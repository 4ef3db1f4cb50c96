#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "rmoe/moe.hpp"
#include "rmoe/tensor.hpp"

namespace rmoe {

struct AttackConfig {
  double epsilon = 0.0;     // l-inf budget, >= 0
  int steps = 10;           // ascent steps per restart (0 = return the init)
  double step_size = 0.0;   // > 0 and <= 2*epsilon when epsilon > 0;
                            // ignored when epsilon == 0 (no-op attack)
  int restarts = 1;
  ForwardView view = ForwardView::kFull;
  std::uint64_t seed = 0;
  // Optional per-coordinate box for x + delta (e.g. {0,1} for image-like
  // data); absent for unconstrained synthetic data.
  std::optional<std::pair<double, double>> clamp;
  // Evaluation runs force this on so the clean point is always among the
  // candidates, which pins RA <= SA.
  bool zero_init_first_restart = false;
};

void validate_attack_config(const AttackConfig& cfg);

// Step size default used when a config leaves step_size at 0: epsilon / 4.
double default_step_size(double epsilon);

// Clips delta into [-epsilon, +epsilon] per coordinate, and additionally
// into [lo - x, hi - x] when a clamp box is given. In-place.
void project_linf(std::span<double> delta, std::span<const double> x,
                  double epsilon,
                  const std::optional<std::pair<double, double>>& clamp);

// Builds the scalar attack loss from a perturbed-input tensor; the graph is
// recorded on whatever tape x_pert lives on.
using AttackLossFn = std::function<Tensor(const Tensor& x_pert)>;

// Called after the initialization and after every ascent step with the
// current delta; used by tests to check the budget invariant step by step.
using StepObserver =
    std::function<void(int restart, int step, std::span<const double> delta)>;

struct PgdResult {
  Tensor delta;          // same shape as x, |delta_i| <= epsilon
  double loss = 0.0;     // loss at the returned candidate
  int aborted_restarts = 0;
};

// Projected gradient ascent with sign steps. Each restart initializes delta
// uniformly in [-eps, +eps] (restart 0 from zero when the config says so),
// takes cfg.steps sign-gradient steps, and projects after every step. The
// initial and final iterate of every restart are candidates; the candidate
// with the highest loss wins, so the returned loss is >= every restart's
// final-iterate loss. A restart whose loss turns non-finite is aborted and
// discarded; if every restart aborts, throws. Deterministic given cfg.seed.
PgdResult pgd(const AttackLossFn& loss_fn, const Tensor& x,
              const AttackConfig& cfg, const StepObserver& observer = {});

// CE of the view's forward output against y. The pgd generation losses for
// single and dual models; `x_clean` is captured as a constant.
Tensor attack_loss(const MoEModel& m, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view, int y);
Tensor attack_loss(const DualModel& dm, const Tensor& x_clean,
                   const Tensor& x_pert, ForwardView view, int y,
                   DualTarget target = DualTarget::kBothSubmodels);

AttackLossFn make_attack_loss(const MoEModel& m, Tensor x_clean,
                              ForwardView view, int y);
AttackLossFn make_attack_loss(const DualModel& dm, Tensor x_clean,
                              ForwardView view, int y,
                              DualTarget target = DualTarget::kBothSubmodels);

}  // namespace rmoe
