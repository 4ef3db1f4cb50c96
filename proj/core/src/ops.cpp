#include "rmoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rmoe {

// Grants op implementations access to tape internals. Ops are the only code
// that creates non-leaf taped tensors.
struct OpAccess {
  using ImplPtr = std::shared_ptr<Tensor::Impl>;

  static Tensor output(Tape* tape, std::vector<std::size_t> shape,
                       std::vector<double> values) {
    Tensor t = Tensor::constant(std::move(shape), std::move(values));
    if (tape != nullptr) {
      t.impl_->requires_grad = true;
      t.impl_->tape = tape;
      t.impl_->grad.assign(t.impl_->value.size(), 0.0);
      tape->tracked_.push_back(t.impl_);
    }
    return t;
  }
  static void record(Tape* tape, std::function<void()> pull) {
    if (tape != nullptr) tape->nodes_.push_back({std::move(pull)});
  }
  static ImplPtr impl(const Tensor& t) { return t.impl_; }
};

namespace {

using Impl = OpAccess::ImplPtr;

Tape* result_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->defined()) throw std::invalid_argument("op: undefined input");
    if (!in->requires_grad()) continue;
    if (tape == nullptr)
      tape = in->tape();
    else if (tape != in->tape())
      throw std::invalid_argument("op: inputs recorded on different tapes");
  }
  return tape;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw std::runtime_error(std::string(op) + ": non-finite output");
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank 2");
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      if (ail == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
    }
  check_finite(out, "matmul");
  Tape* tape = result_tape({&a, &b});
  Tensor c = OpAccess::output(tape, {m, n}, std::move(out));
  if (tape != nullptr) {
    Impl ai = OpAccess::impl(a), bi = OpAccess::impl(b), ci = OpAccess::impl(c);
    OpAccess::record(tape, [ai, bi, ci, m, k, n] {
      const auto& g = ci->grad;
      if (ai->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += g[i * n + j] * bi->value[l * n + j];
            ai->grad[i * k + l] += acc;
          }
      if (bi->requires_grad)
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              acc += ai->value[i * k + l] * g[i * n + j];
            bi->grad[l * n + j] += acc;
          }
    });
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: input must be rank 2");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tape* tape = result_tape({&a});
  Tensor t = OpAccess::output(tape, {n, m}, std::move(out));
  if (tape != nullptr) {
    Impl ai = OpAccess::impl(a), ti = OpAccess::impl(t);
    OpAccess::record(tape, [ai, ti, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ai->grad[i * n + j] += ti->grad[j * m + i];
    });
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shapes differ");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  check_finite(out, "add");
  Tape* tape = result_tape({&a, &b});
  Tensor c = OpAccess::output(tape, a.shape(), std::move(out));
  if (tape != nullptr) {
    Impl ai = OpAccess::impl(a), bi = OpAccess::impl(b), ci = OpAccess::impl(c);
    OpAccess::record(tape, [ai, bi, ci] {
      const auto& g = ci->grad;
      if (ai->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
    });
  }
  return c;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 2 && b.rank() == 1, "add_bias: need {m,n} and {n}");
  require(x.cols() == b.size(), "add_bias: width mismatch");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const auto xv = x.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  check_finite(out, "add_bias");
  Tape* tape = result_tape({&x, &b});
  Tensor c = OpAccess::output(tape, {m, n}, std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), bi = OpAccess::impl(b), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, bi, ci, m, n] {
      const auto& g = ci->grad;
      if (xi->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i];
      if (bi->requires_grad)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
          bi->grad[j] += acc;
        }
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shapes differ");
  std::vector<double> out(a.size());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  check_finite(out, "mul");
  Tape* tape = result_tape({&a, &b});
  Tensor c = OpAccess::output(tape, a.shape(), std::move(out));
  if (tape != nullptr) {
    Impl ai = OpAccess::impl(a), bi = OpAccess::impl(b), ci = OpAccess::impl(c);
    OpAccess::record(tape, [ai, bi, ci] {
      const auto& g = ci->grad;
      if (ai->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i)
          ai->grad[i] += g[i] * bi->value[i];
      if (bi->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i)
          bi->grad[i] += g[i] * ai->value[i];
    });
  }
  return c;
}

Tensor reciprocal(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / xv[i];
  check_finite(out, "reciprocal");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci] {
      for (std::size_t i = 0; i < ci->grad.size(); ++i)
        xi->grad[i] -= ci->grad[i] * ci->value[i] * ci->value[i];
    });
  }
  return c;
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci] {
      for (std::size_t i = 0; i < ci->grad.size(); ++i)
        if (xi->value[i] > 0.0) xi->grad[i] += ci->grad[i];
    });
  }
  return c;
}

Tensor softmax_lastdim(const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, "softmax: rank must be 1 or 2");
  const std::size_t rows = x.rank() == 2 ? x.rows() : 1;
  const std::size_t n = x.rank() == 2 ? x.cols() : x.size();
  require(n >= 1, "softmax: empty rows");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = xv.data() + r * n;
    double* p = out.data() + r * n;
    double zmax = z[0];
    for (std::size_t j = 1; j < n; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(z[j] - zmax);
      denom += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= denom;
  }
  check_finite(out, "softmax_lastdim");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci, rows, n] {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = ci->value.data() + r * n;
        const double* g = ci->grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * p[j];
        for (std::size_t j = 0; j < n; ++j)
          xi->grad[r * n + j] += p[j] * (g[j] - dot);
      }
    });
  }
  return c;
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
  check_finite(out, "log");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci] {
      for (std::size_t i = 0; i < ci->grad.size(); ++i)
        xi->grad[i] += ci->grad[i] / xi->value[i];
    });
  }
  return c;
}

Tensor log_floored(const Tensor& x, double floor) {
  require(floor > 0.0, "log_floored: floor must be positive");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::log(std::max(xv[i], floor));
  check_finite(out, "log_floored");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci, floor] {
      // Zero slope below the floor, matching the clamped forward value.
      for (std::size_t i = 0; i < ci->grad.size(); ++i)
        if (xi->value[i] > floor) xi->grad[i] += ci->grad[i] / xi->value[i];
    });
  }
  return c;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  check_finite({acc}, "sum");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, {1}, {acc});
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    OpAccess::record(tape, [xi, ci] {
      const double g = ci->grad[0];
      for (double& gx : xi->grad) gx += g;
    });
  }
  return c;
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  acc /= static_cast<double>(x.size());
  check_finite({acc}, "mean");
  Tape* tape = result_tape({&x});
  Tensor c = OpAccess::output(tape, {1}, {acc});
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ci = OpAccess::impl(c);
    const double inv = 1.0 / static_cast<double>(x.size());
    OpAccess::record(tape, [xi, ci, inv] {
      const double g = ci->grad[0] * inv;
      for (double& gx : xi->grad) gx += g;
    });
  }
  return c;
}

Tensor scalar_mul(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  check_finite(out, "scalar_mul");
  Tape* tape = result_tape({&x});
  Tensor t = OpAccess::output(tape, x.shape(), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ti = OpAccess::impl(t);
    OpAccess::record(tape, [xi, ti, c] {
      for (std::size_t i = 0; i < ti->grad.size(); ++i)
        xi->grad[i] += c * ti->grad[i];
    });
  }
  return t;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  require(n == x.size(), "reshape: element count differs");
  std::vector<double> out(x.values().begin(), x.values().end());
  Tape* tape = result_tape({&x});
  Tensor t = OpAccess::output(tape, std::move(shape), std::move(out));
  if (tape != nullptr) {
    Impl xi = OpAccess::impl(x), ti = OpAccess::impl(t);
    OpAccess::record(tape, [xi, ti] {
      for (std::size_t i = 0; i < ti->grad.size(); ++i)
        xi->grad[i] += ti->grad[i];
    });
  }
  return t;
}

Tensor neg(const Tensor& x) { return scalar_mul(x, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor row_sum(const Tensor& x) {
  require(x.rank() == 2, "row_sum: input must be rank 2");
  return matmul(x, ones({x.cols(), 1}));
}

Tensor ones(std::vector<std::size_t> shape) {
  return Tensor::full(std::move(shape), 1.0);
}

Tensor one_hot_rows(std::span<const int> labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::invalid_argument("one_hot_rows: label out of range");
    v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::constant({labels.size(), classes}, std::move(v));
}

Tensor ce_loss(const Tensor& probs, std::span<const int> labels) {
  Tensor p = probs.rank() == 1 ? reshape(probs, {1, probs.size()}) : probs;
  require(p.rows() == labels.size(), "ce_loss: label count mismatch");
  Tensor picked = mul(log_floored(p), one_hot_rows(labels, p.cols()));
  return scalar_mul(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

Tensor ce_loss(const Tensor& probs, int label) {
  const int labels[1] = {label};
  return ce_loss(probs, std::span<const int>(labels, 1));
}

Tensor kl_rows(const Tensor& p, const Tensor& q) {
  Tensor pm = p.rank() == 1 ? reshape(p, {1, p.size()}) : p;
  Tensor qm = q.rank() == 1 ? reshape(q, {1, q.size()}) : q;
  require(pm.shape() == qm.shape(), "kl_rows: shapes differ");
  Tensor terms = mul(pm, sub(log_floored(pm), log_floored(qm)));
  return row_sum(terms);
}

Tensor kl_rows_mean(const Tensor& p, const Tensor& q,
                    std::span<const double> row_weight) {
  Tensor per_row = kl_rows(p, q);
  const std::size_t n = per_row.rows();
  if (!row_weight.empty()) {
    require(row_weight.size() == n, "kl_rows_mean: weight count mismatch");
    Tensor w = Tensor::constant(
        {n, 1}, std::vector<double>(row_weight.begin(), row_weight.end()));
    per_row = mul(per_row, w);
  }
  return scalar_mul(sum(per_row), 1.0 / static_cast<double>(n));
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

}  // namespace rmoe
