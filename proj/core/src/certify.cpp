#include "rmoe/certify.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "rmoe/lipschitz.hpp"
#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"

namespace rmoe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_dense(const MoEModel& m, const char* who) {
  if (!m.routing.is_dense())
    throw std::invalid_argument(std::string(who) +
                                ": certification assumes dense routing (hard "
                                "top-k is not Lipschitz); convert the model "
                                "with to_dense first");
}

void check_parts(std::span<const double> probs, int y,
                 std::span<const double> a, const LipschitzBudget& b,
                 const char* who) {
  const std::size_t e = b.L.size();
  if (e == 0 || b.r.size() != e || b.M.size() != e)
    throw std::invalid_argument(std::string(who) + ": ragged budget");
  if (a.size() != e)
    throw std::invalid_argument(std::string(who) +
                                ": routing weights do not match the budget");
  if (probs.size() < 2)
    throw std::invalid_argument(std::string(who) + ": need >= 2 classes");
  if (y < 0 || static_cast<std::size_t>(y) >= probs.size())
    throw std::invalid_argument(std::string(who) + ": label out of range");
  for (std::size_t i = 0; i < e; ++i) {
    if (b.L[i] < 0.0 || b.r[i] < 0.0 || b.M[i] < 0.0 || b.M[i] > 1.0)
      throw std::invalid_argument(std::string(who) + ": budget entry out of range");
    if (a[i] < 0.0)
      throw std::invalid_argument(std::string(who) + ": negative routing weight");
  }
}

// Shared min-over-k / clamp / zero-denominator logic. `num` maps a rival
// class to the bound's numerator.
template <typename NumFn>
CertValue quotient_radius(std::span<const double> probs, int y, double denom,
                          NumFn num) {
  double worst = kInf;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k == static_cast<std::size_t>(y)) continue;
    worst = std::min(worst, num(probs[k]));
  }
  CertValue v;
  if (denom == 0.0) {
    // Constant model: either nothing can flip it or nothing is guaranteed.
    if (worst < 0.0) {
      v.clamped = true;
    } else {
      v.eps2 = kInf;
      v.unbounded = true;
    }
    return v;
  }
  const double q = worst / denom;
  if (q < 0.0) {
    v.clamped = true;
    return v;
  }
  v.eps2 = q;
  return v;
}

std::vector<double> to_vec(std::span<const double> s) {
  return {s.begin(), s.end()};
}

}  // namespace

LipschitzBudget budget(const MoEModel& m) {
  validate_moe(m);
  require_dense(m, "budget");
  LipschitzBudget b;
  b.L.reserve(m.experts.size());
  for (const auto& expert : m.experts) b.L.push_back(mlp_lipschitz_upper(expert));
  const double r = spectral_norm(m.router.W) * 0.5;
  b.r.assign(m.experts.size(), r);
  b.M.assign(m.experts.size(), 1.0);
  return b;
}

MoEModel to_dense(const MoEModel& m) {
  MoEModel d = m;
  d.routing = Routing::dense();
  return d;
}

CertValue single_radius(std::span<const double> probs, int y,
                        std::span<const double> a, const LipschitzBudget& b) {
  check_parts(probs, y, a, b, "single_radius");
  double denom = 0.0;
  for (std::size_t i = 0; i < b.L.size(); ++i)
    denom += b.r[i] * b.M[i] + a[i] * b.L[i];
  const double py = probs[static_cast<std::size_t>(y)];
  return quotient_radius(probs, y, denom, [&](double pk) { return py - pk; });
}

CertValue dual_radius(std::span<const double> robust_probs, int y,
                      std::span<const double> robust_a, double alpha,
                      const LipschitzBudget& b) {
  check_parts(robust_probs, y, robust_a, b, "dual_radius");
  if (alpha < 0.5 || alpha > 1.0)
    throw std::invalid_argument("dual_radius: alpha must be in [0.5, 1]");
  double sum = 0.0;
  for (std::size_t i = 0; i < b.L.size(); ++i)
    sum += 2.0 * b.r[i] + robust_a[i] * (b.L[i] + b.L[i]);
  const double denom = alpha * sum;
  const double py = robust_probs[static_cast<std::size_t>(y)];
  return quotient_radius(robust_probs, y, denom, [&](double pk) {
    return dual_numerator(alpha, py - pk);
  });
}

CertValue certify_single(const MoEModel& m, const Tensor& x, int y,
                         const LipschitzBudget& b) {
  require_dense(m, "certify_single");
  Tensor out = moe_forward(m, x, x, ForwardView::kFull);
  if (argmax(out.values()) != y) return {};
  Tensor a = route_dense(m, x);
  return single_radius(out.values(), y, a.values(), b);
}

CertValue certify_dual(const DualModel& dm, const Tensor& x, int y,
                       const LipschitzBudget& b) {
  require_dense(dm.robust, "certify_dual");
  Tensor out = moe_forward(dm.robust, x, x, ForwardView::kFull);
  Tensor a = route_dense(dm.robust, x);
  return dual_radius(out.values(), y, a.values(), dm.alpha, b);
}

double eps_linf(double eps2, std::size_t d) {
  if (d == 0) throw std::invalid_argument("eps_linf: zero dimension");
  return eps2 / std::sqrt(static_cast<double>(d));
}

SoundnessResult soundness_check(const ProbsFn& f, std::span<const double> x,
                                int y, double eps2, int trials,
                                std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("soundness_check: trials >= 1");
  if (!std::isfinite(eps2) || eps2 < 0.0)
    throw std::invalid_argument("soundness_check: radius must be finite and >= 0");
  const std::size_t d = x.size();
  const std::vector<double> base_probs = f(x);
  const int base = argmax(base_probs);
  (void)y;  // the certified property is argmax stability

  SoundnessResult res;
  res.worst_margin = margin(base_probs, base);
  if (eps2 == 0.0) return res;  // empty ball

  const double radius = 0.99 * eps2;
  Rng rng(derive_seed(seed, "soundness"));
  std::vector<double> pt(d);

  auto probe = [&](const std::vector<double>& delta) {
    for (std::size_t i = 0; i < d; ++i) pt[i] = x[i] + delta[i];
    const std::vector<double> p = f(pt);
    res.worst_margin = std::min(res.worst_margin, margin(p, base));
    if (argmax(p) != base) {
      ++res.flips;
      res.pass = false;
    }
    return p;
  };

  auto sphere_point = [&](std::vector<double>& delta) {
    double norm2 = 0.0;
    for (auto& v : delta) {
      v = rng.next_gaussian();
      norm2 += v * v;
    }
    if (norm2 == 0.0) {
      delta[0] = 1.0;
      norm2 = 1.0;
    }
    const double scale = radius / std::sqrt(norm2);
    for (auto& v : delta) v *= scale;
  };

  std::vector<double> delta(d);
  for (int t = 0; t < trials; ++t) {
    sphere_point(delta);
    probe(delta);
  }

  // Margin descent by finite differences, kept on the sphere. Gradients of
  // the model are deliberately not used so the oracle stays independent of
  // the autodiff path.
  const int descents = 3;
  const int steps = 20;
  const double step = radius / 5.0;
  const double h = 1e-5;
  std::vector<double> shifted(d), g(d);
  auto margin_at = [&](const std::vector<double>& delta_) {
    for (std::size_t i = 0; i < d; ++i) shifted[i] = x[i] + delta_[i];
    return margin(f(shifted), base);
  };
  for (int run = 0; run < descents; ++run) {
    sphere_point(delta);
    probe(delta);
    for (int s = 0; s < steps; ++s) {
      std::vector<double> trial = delta;
      for (std::size_t i = 0; i < d; ++i) {
        trial[i] = delta[i] + h;
        const double up = margin_at(trial);
        trial[i] = delta[i] - h;
        const double down = margin_at(trial);
        trial[i] = delta[i];
        g[i] = (up - down) / (2.0 * h);
      }
      double norm2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        delta[i] -= step * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
        norm2 += delta[i] * delta[i];
      }
      if (norm2 > 0.0) {
        const double scale = radius / std::sqrt(norm2);
        for (auto& v : delta) v *= scale;
      }
      probe(delta);
    }
  }
  return res;
}

namespace {

CertReport::Row report_row(std::size_t id, std::span<const double> probs,
                           int y, std::span<const double> a,
                           const LipschitzBudget& b, const DualModel* dm,
                           std::size_t d) {
  CertReport::Row row;
  row.example_id = id;
  row.margin = margin(probs, y);
  CertValue s;
  if (argmax(probs) == y) s = single_radius(probs, y, a, b);
  row.eps_l2_single = s.eps2;
  row.eps_linf_single = eps_linf(s.eps2, d);
  row.clamped = s.clamped;
  if (dm != nullptr) {
    const CertValue dv = dual_radius(probs, y, a, dm->alpha, b);
    row.eps_l2_dual = dv.eps2;
    row.eps_linf_dual = eps_linf(dv.eps2, d);
    row.clamped = row.clamped || dv.clamped;
  } else {
    row.eps_l2_dual = std::numeric_limits<double>::quiet_NaN();
    row.eps_linf_dual = row.eps_l2_dual;
  }
  return row;
}

}  // namespace

CertReport certify_dataset(const MoEModel& m, const Dataset& ds) {
  validate_dataset(ds);
  const LipschitzBudget b = budget(m);
  CertReport rep;
  rep.rows.reserve(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) {
    Tensor x = example_row(ds, i);
    const auto probs = to_vec(moe_forward(m, x, x, ForwardView::kFull).values());
    const auto a = to_vec(route_dense(m, x).values());
    rep.rows.push_back(report_row(i, probs, ds.y[i], a, b, nullptr, ds.d));
  }
  return rep;
}

CertReport certify_dataset(const DualModel& dm, const Dataset& ds) {
  validate_dataset(ds);
  const LipschitzBudget b = budget(dm.robust);
  CertReport rep;
  rep.rows.reserve(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) {
    Tensor x = example_row(ds, i);
    const auto probs =
        to_vec(moe_forward(dm.robust, x, x, ForwardView::kFull).values());
    const auto a = to_vec(route_dense(dm.robust, x).values());
    rep.rows.push_back(report_row(i, probs, ds.y[i], a, b, &dm, ds.d));
  }
  return rep;
}

void write_cert_report_csv(const std::string& path, const CertReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot write");
  out << "example_id,margin,eps_l2_single,eps_l2_dual,eps_linf_single,"
         "eps_linf_dual,clamped\n";
  char buf[240];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  row.example_id, row.margin, row.eps_l2_single,
                  row.eps_l2_dual, row.eps_linf_single, row.eps_linf_dual,
                  row.clamped ? 1 : 0);
    out << buf;
  }
}

}  // namespace rmoe
