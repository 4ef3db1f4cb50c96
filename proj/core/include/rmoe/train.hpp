#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmoe/attack.hpp"
#include "rmoe/data.hpp"
#include "rmoe/moe.hpp"

namespace rmoe {

// kStandard     : clean cross-entropy.
// kAdversarial  : CE(F(x+delta), y), delta from the configured attack.
// kTrades       : CE(F(x), y) + beta * KL(F(x+delta) || F(x)). The delta here
//                 is generated with the same CE-maximizing attack as the
//                 other methods (a CE-PGD baseline, not the KL-maximizing
//                 original).
// kExpertRobust : CE(F(x+delta), y) + beta * KL consistency term on expert
//                 outputs; the same delta serves both terms. Under
//                 kSecondTopOnly the term is KL(f_s(x+delta) || f_s(x)) for
//                 the runner-up expert s = second_top_expert(m, x+delta),
//                 recomputed per example per step; under kAllExpertsSum it
//                 sums the KL over every expert.
enum class TrainMethod { kStandard, kAdversarial, kTrades, kExpertRobust };

enum class KlVariant { kSecondTopOnly, kAllExpertsSum };

struct LrSchedule {
  enum class Kind { kConstant, kCyclic };
  Kind kind = Kind::kConstant;
  double base = 0.1;
  double peak = 0.1;
  int period = 1;  // steps per full base -> peak -> base triangle

  static LrSchedule constant(double lr) {
    return {Kind::kConstant, lr, lr, 1};
  }
  static LrSchedule cyclic(double base, double peak, int period) {
    return {Kind::kCyclic, base, peak, period};
  }
};

// Triangular wave: lr(0) = base, lr(period/2) = peak, lr(period) = base,
// then repeats. Constant schedules return base for every t.
double cyclic_lr(int t, const LrSchedule& s);

struct TrainConfig {
  TrainMethod method = TrainMethod::kStandard;
  double beta = 0.0;          // weight of the KL term; >= 0
  int epochs = 1;
  int batch_size = 128;
  LrSchedule lr;
  AttackConfig attack;        // training-time attack (ignored by kStandard)
  KlVariant kl_variant = KlVariant::kSecondTopOnly;
  std::uint64_t seed = 0;     // drives shuffling; attack seeds derive from
                              // attack.seed
};

void validate_train_config(const TrainConfig& cfg, const MoEModel& m);

struct StepStats {
  double total = 0.0;  // == ce + beta * kl up to rounding
  double ce = 0.0;
  double kl = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double sa = 0.0;
  double ra = 0.0;
  double ce = 0.0;   // mean over the epoch's steps
  double kl = 0.0;
  double lr = 0.0;   // rate at the epoch's first step
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

void write_train_report_csv(const std::string& path, const TrainReport& r);

// KL(p || q) for two probability vectors, q floored at kProbFloor.
double loss_kl(std::span<const double> p, std::span<const double> q);

// One SGD step on `batch` rows of `data`; returns the decomposed loss.
// `attack_tag` seeds the per-example attack sub-streams.
StepStats train_step(MoEModel& m, const Dataset& data,
                     std::span<const int> batch, const TrainConfig& cfg,
                     double lr, std::uint64_t attack_tag);

// Full loop: shuffled batches per epoch, per-epoch SA/RA on eval_data using
// the training attack budget. Identical config + seed give bit-identical
// final parameters.
TrainReport train(MoEModel& m, const Dataset& train_data,
                  const Dataset& eval_data, const TrainConfig& cfg);

// One epoch of bi-level dual training: per batch, first update the robust
// sub-model alone on the adversarial objective (fresh K-step PGD against it),
// then update both sub-models jointly on clean CE of the combined output.
// The standard sub-model's parameters are untouched by the lower step, and
// alpha stays fixed throughout.
EpochStats jtdmoe_epoch(DualModel& dm, const Dataset& data,
                        const TrainConfig& cfg, int epoch, int* global_step);

TrainReport jtdmoe(DualModel& dm, const Dataset& train_data,
                   const Dataset& eval_data, const TrainConfig& cfg);

}  // namespace rmoe
