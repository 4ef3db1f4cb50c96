#include "rmoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rmoe/eval.hpp"
#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

double cyclic_lr(int t, const LrSchedule& s) {
  if (t < 0) throw std::invalid_argument("cyclic_lr: negative step");
  if (s.kind == LrSchedule::Kind::kConstant || s.period <= 1) return s.base;
  const int phase = t % s.period;
  const double half = static_cast<double>(s.period) / 2.0;
  const double frac = phase <= half ? phase / half
                                    : (static_cast<double>(s.period) - phase) / half;
  return s.base + (s.peak - s.base) * frac;
}

void validate_train_config(const TrainConfig& cfg, const MoEModel& m) {
  validate_moe(m);
  if (cfg.beta < 0.0) throw std::invalid_argument("train: beta must be >= 0");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(cfg.lr.base > 0.0) || !(cfg.lr.peak > 0.0))
    throw std::invalid_argument("train: learning rates must be > 0");
  if (cfg.lr.kind == LrSchedule::Kind::kCyclic && cfg.lr.period < 1)
    throw std::invalid_argument("train: cyclic period must be >= 1");
  if (cfg.method != TrainMethod::kStandard) {
    AttackConfig a = cfg.attack;
    if (a.step_size <= 0.0) a.step_size = default_step_size(a.epsilon);
    if (a.epsilon > 0.0) validate_attack_config(a);
  }
  if (cfg.method == TrainMethod::kExpertRobust &&
      cfg.kl_variant == KlVariant::kSecondTopOnly) {
    if (m.routing.is_dense() || m.routing.k >= m.expert_count())
      throw std::invalid_argument(
          "train: the runner-up consistency term needs top-k routing with "
          "k < expert count");
  }
}

double loss_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("loss_kl: size mismatch");
  Tensor pt = Tensor::constant({1, p.size()}, {p.begin(), p.end()});
  Tensor qt = Tensor::constant({1, q.size()}, {q.begin(), q.end()});
  return kl_rows(pt, qt).item();
}

namespace {

std::vector<int> batch_labels(const Dataset& ds, std::span<const int> batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (int i : batch) out.push_back(ds.y[static_cast<std::size_t>(i)]);
  return out;
}

AttackConfig training_attack(const TrainConfig& cfg) {
  AttackConfig a = cfg.attack;
  if (a.step_size <= 0.0) a.step_size = default_step_size(a.epsilon);
  return a;
}

// Per-example adversarial inputs for one batch, generated against `target`
// with the Full view. Returns the perturbed batch matrix.
Tensor perturb_batch(const MoEModel& target, const Dataset& ds,
                     std::span<const int> batch, const AttackConfig& base,
                     std::uint64_t tag) {
  std::vector<double> xp;
  xp.reserve(batch.size() * ds.d);
  AttackConfig cfg = base;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const std::size_t row = static_cast<std::size_t>(batch[j]);
    Tensor x = example_row(ds, row);
    cfg.seed = derive_seed(derive_seed(base.seed, "train-attack", tag),
                           "example", j);
    PgdResult res = pgd(
        make_attack_loss(target, x, ForwardView::kFull, ds.y[row]), x, cfg);
    for (std::size_t k = 0; k < ds.d; ++k)
      xp.push_back(x.values()[k] + res.delta.values()[k]);
  }
  return Tensor::constant({batch.size(), ds.d}, std::move(xp));
}

// beta * KL consistency term on the bound model's experts; `raw` is the
// unbound model used for runner-up selection (same parameter values).
Tensor kl_consistency(const MoEModel& bound, const MoEModel& raw,
                      const Tensor& x_clean, const Tensor& x_adv,
                      KlVariant variant) {
  const std::size_t n = x_adv.rows();
  Tensor total;
  if (variant == KlVariant::kSecondTopOnly) {
    // Runner-up expert per example, recomputed on the current x + delta.
    const std::size_t d = x_adv.cols();
    std::vector<int> sel(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x_adv.values().subspan(i * d, d);
      Tensor xi = Tensor::constant({d}, {row.begin(), row.end()});
      sel[i] = second_top_expert(raw, xi);
    }
    for (int e = 0; e < bound.expert_count(); ++e) {
      std::vector<double> w(n, 0.0);
      bool any = false;
      for (std::size_t i = 0; i < n; ++i)
        if (sel[i] == e) {
          w[i] = 1.0;
          any = true;
        }
      if (!any) continue;
      Tensor term = kl_rows_mean(mlp_forward(bound.experts[static_cast<std::size_t>(e)], x_adv),
                                 mlp_forward(bound.experts[static_cast<std::size_t>(e)], x_clean), w);
      total = total.defined() ? add(total, term) : term;
    }
  } else {
    for (const auto& expert : bound.experts) {
      Tensor term =
          kl_rows_mean(mlp_forward(expert, x_adv), mlp_forward(expert, x_clean));
      total = total.defined() ? add(total, term) : term;
    }
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace

StepStats train_step(MoEModel& m, const Dataset& data,
                     std::span<const int> batch, const TrainConfig& cfg,
                     double lr, std::uint64_t attack_tag) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto labels = batch_labels(data, batch);
  Tensor xb = batch_matrix(data, batch);

  Tensor x_adv;
  if (cfg.method != TrainMethod::kStandard) {
    const AttackConfig a = training_attack(cfg);
    x_adv = a.epsilon > 0.0 ? perturb_batch(m, data, batch, a, attack_tag) : xb;
  }

  Tape tape;
  std::vector<std::pair<Tensor, Tensor>> pairs;
  MoEModel bound = bind_params(m, tape, pairs);

  Tensor ce, kl;
  switch (cfg.method) {
    case TrainMethod::kStandard:
      ce = ce_loss(moe_forward(bound, xb, xb, ForwardView::kFull), labels);
      break;
    case TrainMethod::kAdversarial:
      ce = ce_loss(moe_forward(bound, xb, x_adv, ForwardView::kFull), labels);
      break;
    case TrainMethod::kTrades: {
      Tensor f_clean = moe_forward(bound, xb, xb, ForwardView::kFull);
      Tensor f_adv = moe_forward(bound, xb, x_adv, ForwardView::kFull);
      ce = ce_loss(f_clean, labels);
      kl = kl_rows_mean(f_adv, f_clean);
      break;
    }
    case TrainMethod::kExpertRobust:
      ce = ce_loss(moe_forward(bound, xb, x_adv, ForwardView::kFull), labels);
      kl = kl_consistency(bound, m, xb, x_adv, cfg.kl_variant);
      break;
  }

  Tensor total = kl.defined() ? add(ce, scalar_mul(kl, cfg.beta)) : ce;
  tape.backward(total);
  sgd_step(pairs, lr);

  StepStats s;
  s.ce = ce.item();
  s.kl = kl.defined() ? kl.item() : 0.0;
  s.total = total.item();
  return s;
}

TrainReport train(MoEModel& m, const Dataset& train_data,
                  const Dataset& eval_data, const TrainConfig& cfg) {
  validate_train_config(cfg, m);
  validate_dataset(train_data);
  validate_dataset(eval_data);

  TrainReport report;
  const AttackConfig eval_attack = training_attack(cfg);
  std::vector<int> order(train_data.n);
  std::iota(order.begin(), order.end(), 0);

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle",
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochStats es;
    es.epoch = epoch;
    es.lr = cyclic_lr(step, cfg.lr);
    double ce_sum = 0.0, kl_sum = 0.0;
    std::size_t steps_in_epoch = 0;
    for (std::size_t off = 0; off < order.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len =
          std::min<std::size_t>(cfg.batch_size, order.size() - off);
      const double lr = cyclic_lr(step, cfg.lr);
      StepStats ss = train_step(
          m, train_data, std::span<const int>(order).subspan(off, len), cfg,
          lr, static_cast<std::uint64_t>(step));
      ce_sum += ss.ce;
      kl_sum += ss.kl;
      ++steps_in_epoch;
      ++step;
    }
    es.ce = ce_sum / static_cast<double>(steps_in_epoch);
    es.kl = kl_sum / static_cast<double>(steps_in_epoch);
    es.sa = clean_accuracy(m, eval_data);
    es.ra = eval_attack.epsilon > 0.0
                ? attacked_accuracy(m, eval_data, eval_attack)
                : es.sa;
    report.epochs.push_back(es);
  }
  return report;
}

EpochStats jtdmoe_epoch(DualModel& dm, const Dataset& data,
                        const TrainConfig& cfg, int epoch, int* global_step) {
  validate_train_config(cfg, dm.robust);
  validate_moe(dm.standard);
  const AttackConfig attack = training_attack(cfg);

  std::vector<int> order(data.n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle",
                              static_cast<std::uint64_t>(epoch)));
  shuffle_rng.shuffle(order);

  EpochStats es;
  es.epoch = epoch;
  es.lr = cyclic_lr(*global_step, cfg.lr);
  double ce_sum = 0.0, kl_sum = 0.0;
  std::size_t steps_in_epoch = 0;

  for (std::size_t off = 0; off < order.size();
       off += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t len =
        std::min<std::size_t>(cfg.batch_size, order.size() - off);
    const auto batch = std::span<const int>(order).subspan(off, len);
    const auto labels = batch_labels(data, batch);
    Tensor xb = batch_matrix(data, batch);
    const double lr = cyclic_lr(*global_step, cfg.lr);

    // Lower level: robust parameters only, adversarial objective with a
    // fresh K-step attack against the robust sub-model.
    {
      Tensor x_adv = attack.epsilon > 0.0
                         ? perturb_batch(dm.robust, data, batch, attack,
                                         static_cast<std::uint64_t>(*global_step))
                         : xb;
      Tape tape;
      std::vector<std::pair<Tensor, Tensor>> pairs;
      MoEModel bound = bind_params(dm.robust, tape, pairs);
      Tensor ce = ce_loss(moe_forward(bound, xb, x_adv, ForwardView::kFull),
                          labels);
      Tensor kl = kl_consistency(bound, dm.robust, xb, x_adv, cfg.kl_variant);
      Tensor total = add(ce, scalar_mul(kl, cfg.beta));
      tape.backward(total);
      sgd_step(pairs, lr);
      kl_sum += kl.item();
    }

    // Upper level: both sub-models jointly on clean CE of the combination;
    // alpha stays fixed.
    {
      Tape tape;
      std::vector<std::pair<Tensor, Tensor>> pairs;
      DualModel bound = dm;
      bound.standard = bind_params(dm.standard, tape, pairs);
      bound.robust = bind_params(dm.robust, tape, pairs);
      Tensor ce = ce_loss(dual_forward(bound, xb, xb, ForwardView::kFull),
                          labels);
      tape.backward(ce);
      sgd_step(pairs, lr);
      ce_sum += ce.item();
    }

    ++steps_in_epoch;
    ++*global_step;
  }

  es.ce = ce_sum / static_cast<double>(steps_in_epoch);
  es.kl = kl_sum / static_cast<double>(steps_in_epoch);
  return es;
}

TrainReport jtdmoe(DualModel& dm, const Dataset& train_data,
                   const Dataset& eval_data, const TrainConfig& cfg) {
  validate_dataset(train_data);
  validate_dataset(eval_data);
  const AttackConfig eval_attack = training_attack(cfg);

  TrainReport report;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats es = jtdmoe_epoch(dm, train_data, cfg, epoch, &step);
    es.sa = clean_accuracy(dm, eval_data);
    es.ra = eval_attack.epsilon > 0.0
                ? attacked_accuracy(dm, eval_data, eval_attack)
                : es.sa;
    report.epochs.push_back(es);
  }
  return report;
}

void write_train_report_csv(const std::string& path, const TrainReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write");
  out << "epoch,sa,ra,ce_term,kl_term,lr\n";
  char buf[160];
  for (const auto& e : r.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  e.epoch, e.sa, e.ra, e.ce, e.kl, e.lr);
    out << buf;
  }
}

}  // namespace rmoe
