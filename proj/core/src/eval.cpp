#include "rmoe/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Per-example attack seeds: one sub-stream per (metric, example).
std::uint64_t example_seed(const AttackConfig& cfg, std::string_view metric,
                           std::size_t i) {
  return derive_seed(cfg.seed, metric, i);
}

std::vector<int> predictions(const Tensor& probs) {
  const std::size_t n = probs.rows(), c = probs.cols();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = argmax(probs.values().subspan(i * c, c));
  return out;
}

// Top-k expert set at x, by the deterministic (weight desc, index asc) rank.
std::set<int> top_set(const MoEModel& m, const Tensor& x) {
  Tensor w = route(m, x);
  std::set<int> s;
  const auto wv = w.values();
  for (std::size_t e = 0; e < wv.size(); ++e)
    if (wv[e] > 0.0) s.insert(static_cast<int>(e));
  return s;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write");
  return out;
}

}  // namespace

double clean_accuracy(const MoEModel& m, const Dataset& ds,
                      std::size_t* correct) {
  validate_dataset(ds);
  Tensor x = full_matrix(ds);
  const auto preds = predictions(moe_forward(m, x, x, ForwardView::kFull));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.n; ++i)
    if (preds[i] == ds.y[i]) ++hit;
  if (correct) *correct = hit;
  return static_cast<double>(hit) / static_cast<double>(ds.n);
}

double clean_accuracy(const DualModel& dm, const Dataset& ds,
                      std::size_t* correct) {
  validate_dataset(ds);
  Tensor x = full_matrix(ds);
  const auto preds = predictions(dual_forward(dm, x, x, ForwardView::kFull));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.n; ++i)
    if (preds[i] == ds.y[i]) ++hit;
  if (correct) *correct = hit;
  return static_cast<double>(hit) / static_cast<double>(ds.n);
}

namespace {

// Shared per-example attack loop. `gen_loss` builds the generation loss for
// example i; `final_pred` maps the perturbed input to a prediction.
std::size_t attacked_correct_count(
    const Dataset& ds, const AttackConfig& base, std::string_view metric,
    const std::function<AttackLossFn(std::size_t)>& gen_loss,
    const std::function<int(std::size_t, const Tensor&)>& final_pred,
    const std::function<void(std::size_t, const Tensor&)>& on_delta = {}) {
  AttackConfig cfg = base;
  cfg.zero_init_first_restart = true;
  if (cfg.step_size <= 0.0) cfg.step_size = default_step_size(cfg.epsilon);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    cfg.seed = example_seed(base, metric, i);
    Tensor x = example_row(ds, i);
    PgdResult res = pgd(gen_loss(i), x, cfg);
    std::vector<double> xp(ds.d);
    for (std::size_t j = 0; j < ds.d; ++j)
      xp[j] = x.values()[j] + res.delta.values()[j];
    Tensor x_adv = Tensor::constant({ds.d}, std::move(xp));
    if (on_delta) on_delta(i, x_adv);
    if (final_pred(i, x_adv) == ds.y[i]) ++hit;
  }
  return hit;
}

}  // namespace

double attacked_accuracy(const MoEModel& m, const Dataset& ds,
                         const AttackConfig& cfg, std::size_t* correct) {
  validate_dataset(ds);
  const std::size_t hit = attacked_correct_count(
      ds, cfg, "ra",
      [&](std::size_t i) {
        return make_attack_loss(m, example_row(ds, i), ForwardView::kFull,
                                ds.y[i]);
      },
      [&](std::size_t i, const Tensor& x_adv) {
        Tensor f = moe_forward(m, example_row(ds, i), x_adv, ForwardView::kFull);
        return argmax(f.values());
      });
  if (correct) *correct = hit;
  return static_cast<double>(hit) / static_cast<double>(ds.n);
}

double attacked_accuracy(const DualModel& dm, const Dataset& ds,
                         const AttackConfig& cfg, std::size_t* correct) {
  validate_dataset(ds);
  const std::size_t hit = attacked_correct_count(
      ds, cfg, "ra-dual",
      [&](std::size_t i) {
        return make_attack_loss(dm, example_row(ds, i), ForwardView::kFull,
                                ds.y[i]);
      },
      [&](std::size_t i, const Tensor& x_adv) {
        Tensor f =
            dual_forward(dm, example_row(ds, i), x_adv, ForwardView::kFull);
        return argmax(f.values());
      });
  if (correct) *correct = hit;
  return static_cast<double>(hit) / static_cast<double>(ds.n);
}

EvalReport evaluate_single(const MoEModel& m, const Dataset& ds,
                           const AttackConfig& cfg) {
  validate_moe(m);
  validate_dataset(ds);
  EvalReport r;
  r.n = ds.n;
  r.attack = cfg;
  r.sa = clean_accuracy(m, ds, &r.sa_count);
  r.ra = attacked_accuracy(m, ds, cfg, &r.ra_count);

  // Component-targeted deltas transfer to the full model for prediction.
  auto full_pred = [&](std::size_t i, const Tensor& x_adv) {
    Tensor f = moe_forward(m, example_row(ds, i), x_adv, ForwardView::kFull);
    return argmax(f.values());
  };
  std::size_t stable = 0;
  const bool track_routes = !m.routing.is_dense();
  r.ra_e_count = attacked_correct_count(
      ds, cfg, "ra-e",
      [&](std::size_t i) {
        return make_attack_loss(m, example_row(ds, i),
                                ForwardView::kExpertTarget, ds.y[i]);
      },
      full_pred,
      [&](std::size_t i, const Tensor& x_adv) {
        if (track_routes &&
            top_set(m, example_row(ds, i)) == top_set(m, x_adv))
          ++stable;
      });
  r.ra_r_count = attacked_correct_count(
      ds, cfg, "ra-r",
      [&](std::size_t i) {
        return make_attack_loss(m, example_row(ds, i),
                                ForwardView::kRouterTarget, ds.y[i]);
      },
      full_pred);
  r.ra_e = static_cast<double>(r.ra_e_count) / static_cast<double>(ds.n);
  r.ra_r = static_cast<double>(r.ra_r_count) / static_cast<double>(ds.n);
  if (track_routes)
    r.route_stability = static_cast<double>(stable) / static_cast<double>(ds.n);
  return r;
}

DualEvalReport evaluate_dual(const DualModel& dm, const Dataset& ds,
                             const AttackConfig& cfg) {
  validate_dataset(ds);
  DualEvalReport r;
  r.n = ds.n;
  r.attack = cfg;
  r.sa = clean_accuracy(dm, ds, &r.sa_count);
  r.ra = attacked_accuracy(dm, ds, cfg, &r.ra_count);

  auto dual_pred = [&](std::size_t i, const Tensor& x_adv) {
    Tensor f = dual_forward(dm, example_row(ds, i), x_adv, ForwardView::kFull);
    return argmax(f.values());
  };
  // Deltas generated against one sub-model alone.
  r.ra_rmoe_count = attacked_correct_count(
      ds, cfg, "ra-rmoe",
      [&](std::size_t i) {
        return make_attack_loss(dm.robust, example_row(ds, i),
                                ForwardView::kFull, ds.y[i]);
      },
      dual_pred);
  r.ra_smoe_count = attacked_correct_count(
      ds, cfg, "ra-smoe",
      [&](std::size_t i) {
        return make_attack_loss(dm.standard, example_row(ds, i),
                                ForwardView::kFull, ds.y[i]);
      },
      dual_pred);
  r.ra_rmoe = static_cast<double>(r.ra_rmoe_count) / static_cast<double>(ds.n);
  r.ra_smoe = static_cast<double>(r.ra_smoe_count) / static_cast<double>(ds.n);
  return r;
}

MarginReport margin_report(const MoEModel& a, const MoEModel& b,
                           const Dataset& ds) {
  validate_dataset(ds);
  if (a.in_dim() != b.in_dim() || a.class_count() != b.class_count())
    throw std::invalid_argument("margin_report: model shapes disagree");
  Tensor x = full_matrix(ds);
  Tensor fa = moe_forward(a, x, x, ForwardView::kFull);
  Tensor fb = moe_forward(b, x, x, ForwardView::kFull);
  const std::size_t c = a.class_count();

  MarginReport report;
  for (int cls = 0; cls < static_cast<int>(c); ++cls) {
    MarginReport::Row row;
    row.cls = cls;
    double sum_a = 0, sum_b = 0, sum_a_all = 0, sum_b_all = 0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      if (ds.y[i] != cls) continue;
      ++row.n;
      const auto pa = fa.values().subspan(i * c, c);
      const auto pb = fb.values().subspan(i * c, c);
      const double ma = margin(pa, cls), mb = margin(pb, cls);
      sum_a_all += ma;
      sum_b_all += mb;
      if (argmax(pa) == cls) {
        ++row.a_correct;
        sum_a += ma;
      }
      if (argmax(pb) == cls) {
        ++row.b_correct;
        sum_b += mb;
      }
    }
    if (row.n == 0) {
      row.missing = true;
    } else {
      row.margin_a = row.a_correct ? sum_a / static_cast<double>(row.a_correct) : 0.0;
      row.margin_b = row.b_correct ? sum_b / static_cast<double>(row.b_correct) : 0.0;
      row.delta = row.margin_b - row.margin_a;
      row.margin_a_all = sum_a_all / static_cast<double>(row.n);
      row.margin_b_all = sum_b_all / static_cast<double>(row.n);
      row.delta_all = row.margin_b_all - row.margin_a_all;
    }
    report.rows.push_back(row);
  }
  return report;
}

void write_eval_report_csv(const std::string& path, const EvalReport& r) {
  auto out = open_out(path);
  out << "n,sa,ra,ra_e,ra_r,sa_count,ra_count,ra_e_count,ra_r_count,"
         "route_stability,epsilon,steps,step_size,restarts\n";
  out << r.n << "," << fmt(r.sa) << "," << fmt(r.ra) << "," << fmt(r.ra_e)
      << "," << fmt(r.ra_r) << "," << r.sa_count << "," << r.ra_count << ","
      << r.ra_e_count << "," << r.ra_r_count << "," << fmt(r.route_stability)
      << "," << fmt(r.attack.epsilon) << "," << r.attack.steps << ","
      << fmt(r.attack.step_size) << "," << r.attack.restarts << "\n";
}

void write_eval_report_csv(const std::string& path, const DualEvalReport& r) {
  auto out = open_out(path);
  out << "n,sa,ra,ra_rmoe,ra_smoe,sa_count,ra_count,ra_rmoe_count,"
         "ra_smoe_count,epsilon,steps,step_size,restarts\n";
  out << r.n << "," << fmt(r.sa) << "," << fmt(r.ra) << "," << fmt(r.ra_rmoe)
      << "," << fmt(r.ra_smoe) << "," << r.sa_count << "," << r.ra_count << ","
      << r.ra_rmoe_count << "," << r.ra_smoe_count << ","
      << fmt(r.attack.epsilon) << "," << r.attack.steps << ","
      << fmt(r.attack.step_size) << "," << r.attack.restarts << "\n";
}

void write_eval_summary(const std::string& path, const EvalReport& r) {
  auto out = open_out(path);
  out << "examples: " << r.n << "\n"
      << "sa: " << fmt(r.sa) << " (" << r.sa_count << "/" << r.n << ")\n"
      << "ra: " << fmt(r.ra) << " (" << r.ra_count << "/" << r.n << ")\n"
      << "ra_e: " << fmt(r.ra_e) << " (" << r.ra_e_count << "/" << r.n << ")\n"
      << "ra_r: " << fmt(r.ra_r) << " (" << r.ra_r_count << "/" << r.n << ")\n"
      << "route_stability: " << fmt(r.route_stability) << "\n"
      << "attack: epsilon=" << fmt(r.attack.epsilon)
      << " steps=" << r.attack.steps << " step_size=" << fmt(r.attack.step_size)
      << " restarts=" << r.attack.restarts << "\n";
}

void write_eval_summary(const std::string& path, const DualEvalReport& r) {
  auto out = open_out(path);
  out << "examples: " << r.n << "\n"
      << "sa: " << fmt(r.sa) << " (" << r.sa_count << "/" << r.n << ")\n"
      << "ra: " << fmt(r.ra) << " (" << r.ra_count << "/" << r.n << ")\n"
      << "ra_rmoe: " << fmt(r.ra_rmoe) << " (" << r.ra_rmoe_count << "/" << r.n
      << ")\n"
      << "ra_smoe: " << fmt(r.ra_smoe) << " (" << r.ra_smoe_count << "/" << r.n
      << ")\n"
      << "attack: epsilon=" << fmt(r.attack.epsilon)
      << " steps=" << r.attack.steps << " step_size=" << fmt(r.attack.step_size)
      << " restarts=" << r.attack.restarts << "\n";
}

void write_margin_report_csv(const std::string& path, const MarginReport& r) {
  auto out = open_out(path);
  out << "class,n,a_correct,b_correct,margin_a,margin_b,delta,"
         "margin_a_all,margin_b_all,delta_all,missing\n";
  for (const auto& row : r.rows) {
    out << row.cls << "," << row.n << "," << row.a_correct << ","
        << row.b_correct << "," << fmt(row.margin_a) << "," << fmt(row.margin_b)
        << "," << fmt(row.delta) << "," << fmt(row.margin_a_all) << ","
        << fmt(row.margin_b_all) << "," << fmt(row.delta_all) << ","
        << (row.missing ? 1 : 0) << "\n";
  }
}

}  // namespace rmoe
