#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rmoe/data.hpp"
#include "rmoe/moe.hpp"

namespace rmoe {

// Per-expert smoothness budget of a dense-routed model. All three vectors
// have length E.
struct LipschitzBudget {
  std::vector<double> L;  // whole-expert l2 Lipschitz upper bounds
  std::vector<double> r;  // router output bounds, identical entries
  std::vector<double> M;  // expert output caps, 1.0 under softmax heads
};

// Assembles the budget from spectral norms. Requires dense routing: a hard
// top-k selection is discontinuous, so no finite budget exists for it.
// Convert with to_dense first.
LipschitzBudget budget(const MoEModel& m);

// Same parameters, dense routing. The certified radius speaks about this
// model, not about the top-k original.
MoEModel to_dense(const MoEModel& m);

struct CertValue {
  double eps2 = 0.0;      // certified l2 radius
  bool unbounded = false; // zero denominator: no perturbation moves the output
  bool clamped = false;   // negative quotient clamped to the vacuous radius 0
};

// alpha * margin + alpha - 1, the combined-model numerator. Negative whenever
// margin < (1 - alpha) / alpha. Grouped so that alpha = 1 yields the margin
// bit for bit, which keeps the radius exactly half the single-model one there.
inline double dual_numerator(double alpha, double margin) {
  return alpha * margin + (alpha - 1.0);
}

// Radius of a single model from its output row and routing weights at x:
//   max(0, min_{k != y} (p[y] - p[k]) / sum_i (r_i * M_i + a_i * L_i)).
CertValue single_radius(std::span<const double> probs, int y,
                        std::span<const double> a, const LipschitzBudget& b);

// Radius of the combined model (1-alpha) F_S + alpha F_R from the robust
// sub-model's output row and routing weights:
//   max(0, min_{k != y} (alpha*(p[y]-p[k]) + alpha - 1)
//                       / (alpha * sum_i (2 r_i + a_i * (L_i + L_i)))).
// The standard sub-model needs no budget; its influence is absorbed by the
// alpha - 1 term.
CertValue dual_radius(std::span<const double> robust_probs, int y,
                      std::span<const double> robust_a, double alpha,
                      const LipschitzBudget& b);

// Wrappers that evaluate the model at x (a {d} tensor) first. A misclassified
// x (y != argmax) certifies radius 0 outright.
CertValue certify_single(const MoEModel& m, const Tensor& x, int y,
                         const LipschitzBudget& b);
// `b` is the robust sub-model's budget.
CertValue certify_dual(const DualModel& dm, const Tensor& x, int y,
                       const LipschitzBudget& b);

// Conservative norm conversion: an l-inf ball of radius eps2/sqrt(d) sits
// inside the l2 ball of radius eps2.
double eps_linf(double eps2, std::size_t d);

struct SoundnessResult {
  bool pass = true;        // no argmax flip found inside the ball
  double worst_margin = 0; // smallest margin seen over every probe
  int flips = 0;
};

// Evaluates a classifier at perturbed inputs; returns one probability row.
using ProbsFn =
    std::function<std::vector<double>(std::span<const double> x)>;

// Empirical falsifier for a certified radius: probes `trials` random points
// on the l2 sphere of radius 0.99 * eps2 plus a few finite-difference descent
// runs on the margin, renormalized to the sphere after each step. PASS means
// the argmax at x never changed; a FAIL indicates a certification bug.
// eps2 = 0 passes vacuously; eps2 must be finite.
SoundnessResult soundness_check(const ProbsFn& f, std::span<const double> x,
                                int y, double eps2, int trials,
                                std::uint64_t seed);

struct CertReport {
  struct Row {
    std::size_t example_id = 0;
    double margin = 0.0;  // robust-model margin, the numerator basis
    double eps_l2_single = 0.0;
    double eps_l2_dual = 0.0;  // nan for plain models
    double eps_linf_single = 0.0;
    double eps_linf_dual = 0.0;
    bool clamped = false;
  };
  std::vector<Row> rows;
};

// Per-example radii over a dataset. The dual overload certifies the robust
// sub-model alone (single columns) and the combination (dual columns).
CertReport certify_dataset(const MoEModel& m, const Dataset& ds);
CertReport certify_dataset(const DualModel& dm, const Dataset& ds);

void write_cert_report_csv(const std::string& path, const CertReport& r);

}  // namespace rmoe
