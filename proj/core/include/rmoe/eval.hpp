#pragma once

#include <string>

#include "rmoe/attack.hpp"
#include "rmoe/data.hpp"
#include "rmoe/moe.hpp"

namespace rmoe {

// Accuracy metrics for one mixture model. SA is the clean accuracy. RA,
// RA-E and RA-R generate delta per example under the Full, ExpertTarget and
// RouterTarget views respectively; every delta is then applied to the full
// model for the final prediction. All fractions are count-backed.
struct EvalReport {
  std::size_t n = 0;
  std::size_t sa_count = 0, ra_count = 0, ra_e_count = 0, ra_r_count = 0;
  double sa = 0.0, ra = 0.0, ra_e = 0.0, ra_r = 0.0;
  // Fraction of expert-targeted attacks whose perturbed input still selects
  // the same top-k expert set (top-k routing only; -1 when dense).
  double route_stability = -1.0;
  AttackConfig attack;
};

// Dual-model metrics. RA attacks the combined model end to end; RA-RMoE and
// RA-SMoE generate delta against one sub-model alone and evaluate the
// combined model at x + delta.
struct DualEvalReport {
  std::size_t n = 0;
  std::size_t sa_count = 0, ra_count = 0, ra_rmoe_count = 0, ra_smoe_count = 0;
  double sa = 0.0, ra = 0.0, ra_rmoe = 0.0, ra_smoe = 0.0;
  AttackConfig attack;
};

// Per-class margin comparison of two models of the same shape. The primary
// columns average margin(F(x), y) over the examples each model classifies
// correctly; the _all columns average over every example of the class. A
// class with no test examples is flagged missing, not fabricated.
struct MarginReport {
  struct Row {
    int cls = 0;
    std::size_t n = 0;
    std::size_t a_correct = 0, b_correct = 0;
    double margin_a = 0.0, margin_b = 0.0, delta = 0.0;
    double margin_a_all = 0.0, margin_b_all = 0.0, delta_all = 0.0;
    bool missing = false;
  };
  std::vector<Row> rows;
};

// Building blocks. Attacked accuracy forces a zero-initialized first restart
// so the clean point is always in the attack's candidate set.
double clean_accuracy(const MoEModel& m, const Dataset& ds,
                      std::size_t* correct = nullptr);
double clean_accuracy(const DualModel& dm, const Dataset& ds,
                      std::size_t* correct = nullptr);

EvalReport evaluate_single(const MoEModel& m, const Dataset& ds,
                           const AttackConfig& cfg);
DualEvalReport evaluate_dual(const DualModel& dm, const Dataset& ds,
                             const AttackConfig& cfg);

// RA only (Full view / end-to-end dual); the cheap per-epoch metric.
double attacked_accuracy(const MoEModel& m, const Dataset& ds,
                         const AttackConfig& cfg,
                         std::size_t* correct = nullptr);
double attacked_accuracy(const DualModel& dm, const Dataset& ds,
                         const AttackConfig& cfg,
                         std::size_t* correct = nullptr);

MarginReport margin_report(const MoEModel& a, const MoEModel& b,
                           const Dataset& ds);

void write_eval_report_csv(const std::string& path, const EvalReport& r);
void write_eval_report_csv(const std::string& path, const DualEvalReport& r);
void write_eval_summary(const std::string& path, const EvalReport& r);
void write_eval_summary(const std::string& path, const DualEvalReport& r);
void write_margin_report_csv(const std::string& path, const MarginReport& r);

}  // namespace rmoe
