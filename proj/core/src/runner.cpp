#include "rmoe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "rmoe/attack.hpp"
#include "rmoe/certify.hpp"
#include "rmoe/data.hpp"
#include "rmoe/eval.hpp"
#include "rmoe/ops.hpp"
#include "rmoe/rng.hpp"
#include "rmoe/serialize.hpp"
#include "rmoe/train.hpp"

namespace fs = std::filesystem;

namespace rmoe {

namespace {

// Config -> domain structs. All validation beyond key typing happens in the
// module constructors and validate_* functions these call into.

AttackConfig attack_from(const RunConfig& cfg, bool eval_budget) {
  AttackConfig a;
  a.epsilon = cfg.get_double("attack.epsilon");
  a.steps = static_cast<int>(cfg.get_int(eval_budget ? "eval.steps" : "attack.steps"));
  a.step_size = cfg.get_double("attack.step_size");
  a.restarts =
      static_cast<int>(cfg.get_int(eval_budget ? "eval.restarts" : "attack.restarts"));
  const std::string view = cfg.get_string("attack.view");
  a.view = view == "router"   ? ForwardView::kRouterTarget
           : view == "expert" ? ForwardView::kExpertTarget
           : view == "smooth" ? ForwardView::kSmooth
                              : ForwardView::kFull;
  a.clamp = parse_clamp(cfg.get_string("attack.clamp"));
  a.seed = derive_seed(cfg.get_u64("seed"), "attack");
  return a;
}

TrainConfig train_from(const RunConfig& cfg) {
  TrainConfig t;
  const std::string method = cfg.get_string("train.method");
  t.method = method == "adversarial"     ? TrainMethod::kAdversarial
             : method == "trades"        ? TrainMethod::kTrades
             : method == "expert_robust" ? TrainMethod::kExpertRobust
                                         : TrainMethod::kStandard;
  t.beta = cfg.get_double("train.beta");
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  if (cfg.get_string("train.lr.kind") == "constant")
    t.lr = LrSchedule::constant(cfg.get_double("train.lr.base"));
  else
    t.lr = LrSchedule::cyclic(cfg.get_double("train.lr.base"),
                              cfg.get_double("train.lr.peak"),
                              static_cast<int>(cfg.get_int("train.lr.period")));
  t.attack = attack_from(cfg, false);
  t.kl_variant = cfg.get_string("train.kl_variant") == "all_experts"
                     ? KlVariant::kAllExpertsSum
                     : KlVariant::kSecondTopOnly;
  t.seed = derive_seed(cfg.get_u64("seed"), "shuffle-root");
  return t;
}

MoEModel model_from(const RunConfig& cfg, std::size_t d, std::size_t classes) {
  const Routing routing =
      cfg.get_string("model.routing") == "dense"
          ? Routing::dense()
          : Routing::top_k(static_cast<int>(cfg.get_int("model.topk")));
  const long long layers = cfg.get_int("model.hidden_layers");
  if (layers < 0) throw std::invalid_argument("config: model.hidden_layers < 0");
  std::vector<std::size_t> hidden(
      static_cast<std::size_t>(layers),
      static_cast<std::size_t>(cfg.get_int("model.hidden")));
  return make_moe(d, classes, static_cast<int>(cfg.get_int("model.experts")),
                  hidden, routing, derive_seed(cfg.get_u64("seed"), "model"));
}

// Train/test pair: either both CSVs are named in the config, or both splits
// are cut from one generated set (classes alternate by row, so a prefix
// split stays balanced).
std::pair<Dataset, Dataset> resolve_data(const RunConfig& cfg) {
  const std::string train_path = cfg.get_string("data.train");
  const std::string test_path = cfg.get_string("data.test");
  if (!train_path.empty() || !test_path.empty()) {
    if (train_path.empty() || test_path.empty())
      throw std::invalid_argument(
          "config: data.train and data.test must be set together");
    Dataset train = load_csv(train_path);
    Dataset test = load_csv(test_path);
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  const std::size_t n = static_cast<std::size_t>(cfg.get_int("dataset.n"));
  const double frac = cfg.get_double("dataset.train_fraction");
  if (!(frac > 0.0 && frac < 1.0))
    throw std::invalid_argument("config: dataset.train_fraction outside (0, 1)");
  Dataset all = gen_dataset(data_kind_from_string(cfg.get_string("dataset.kind")),
                            n, cfg.get_double("dataset.noise"),
                            cfg.get_u64("seed"));
  const std::size_t train_n = static_cast<std::size_t>(
      std::llround(frac * static_cast<double>(n)));
  if (train_n == 0 || train_n >= n)
    throw std::invalid_argument("config: split leaves an empty train or test set");
  Dataset train, test;
  train.n = train_n;
  test.n = n - train_n;
  train.d = test.d = all.d;
  train.classes = test.classes = all.classes;
  train.split = "train";
  test.split = "test";
  train.X.assign(all.X.begin(), all.X.begin() + static_cast<long>(train_n * all.d));
  train.y.assign(all.y.begin(), all.y.begin() + static_cast<long>(train_n));
  test.X.assign(all.X.begin() + static_cast<long>(train_n * all.d), all.X.end());
  test.y.assign(all.y.begin() + static_cast<long>(train_n), all.y.end());
  return {std::move(train), std::move(test)};
}

void write_config_echo(const std::string& dir, const RunConfig& cfg) {
  std::ofstream out(dir + "/config.txt");
  if (!out) throw std::runtime_error(dir + "/config.txt: cannot write");
  for (const auto& spec : RunConfig::registry())
    out << spec.key << " = " << cfg.get(spec.key) << '\n';
}

std::string need_path(const RunConfig& cfg, const std::string& key,
                      const char* purpose) {
  const std::string p = cfg.get_string(key);
  if (p.empty())
    throw std::invalid_argument("config: " + key + " must name " + purpose);
  return p;
}

std::uint64_t file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error(p.string() + ": cannot read");
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a64(buf.str());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

void kv(std::ostream& out, const char* key, const std::string& value) {
  out << key << ' ' << value << '\n';
}

void kv(std::ostream& out, const char* key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  kv(out, key, std::string(buf));
}

// Per-subcommand bodies. Each writes its artifacts into `dir` and result
// lines to `out`; the manifest is written by the caller afterwards.

void cmd_gen_data(const RunConfig& cfg, const std::string& dir,
                  std::ostream& out) {
  auto [train, test] = resolve_data(cfg);
  save_csv(dir + "/train.csv", train);
  save_csv(dir + "/test.csv", test);
  kv(out, "train_n", static_cast<double>(train.n));
  kv(out, "test_n", static_cast<double>(test.n));
}

void cmd_train(const RunConfig& cfg, const std::string& dir,
               std::ostream& out) {
  auto [train_set, test_set] = resolve_data(cfg);
  MoEModel m = model_from(cfg, train_set.d,
                          static_cast<std::size_t>(train_set.classes));
  const TrainConfig tc = train_from(cfg);
  const TrainReport report = train(m, train_set, test_set, tc);
  save_model(dir + "/model.txt", m);
  write_train_report_csv(dir + "/train_report.csv", report);
  const EpochStats& last = report.epochs.back();
  kv(out, "final_sa", last.sa);
  kv(out, "final_ra", last.ra);
  kv(out, "model", dir + "/model.txt");
}

// Emits the adversarial test set (same schema as any dataset CSV, so it can
// be fed back through data.test) plus the flip rate.
void cmd_attack(const RunConfig& cfg, const std::string& dir,
                std::ostream& out) {
  const std::string model_path = need_path(cfg, "io.model", "the model to attack");
  auto [train_set, test_set] = resolve_data(cfg);
  (void)train_set;
  AttackConfig a = attack_from(cfg, true);
  if (a.step_size <= 0.0) a.step_size = default_step_size(a.epsilon);
  a.zero_init_first_restart = true;

  Dataset adv = test_set;
  adv.split = "test";
  std::size_t flips = 0;
  const ModelKind kind = peek_model_kind(model_path);
  MoEModel moe;
  DualModel dual;
  if (kind == ModelKind::kMoe)
    moe = load_moe(model_path);
  else
    dual = load_dual(model_path);

  for (std::size_t i = 0; i < test_set.n; ++i) {
    Tensor x = example_row(test_set, i);
    AttackConfig ai = a;
    ai.seed = derive_seed(a.seed, "attack-cmd", i);
    const AttackLossFn loss =
        kind == ModelKind::kMoe
            ? make_attack_loss(moe, x, a.view, test_set.y[i])
            : make_attack_loss(dual, x, a.view, test_set.y[i]);
    const PgdResult res = pgd(loss, x, ai);
    std::vector<double> xa(test_set.d);
    for (std::size_t k = 0; k < test_set.d; ++k)
      xa[k] = x.values()[k] + res.delta.values()[k];
    std::copy(xa.begin(), xa.end(), adv.X.begin() + static_cast<long>(i * adv.d));
    Tensor xat = Tensor::constant({test_set.d}, std::move(xa));
    Tensor probs = kind == ModelKind::kMoe
                       ? moe_forward(moe, xat, xat, ForwardView::kFull)
                       : dual_forward(dual, xat, xat, ForwardView::kFull);
    Tensor clean = kind == ModelKind::kMoe
                       ? moe_forward(moe, x, x, ForwardView::kFull)
                       : dual_forward(dual, x, x, ForwardView::kFull);
    if (argmax(probs.values()) != argmax(clean.values())) ++flips;
  }
  save_csv(dir + "/adv_test.csv", adv);
  kv(out, "flip_rate",
     static_cast<double>(flips) / static_cast<double>(test_set.n));
  kv(out, "adv_test", dir + "/adv_test.csv");
}

void cmd_eval(const RunConfig& cfg, const std::string& dir, std::ostream& out) {
  const std::string model_path = need_path(cfg, "io.model", "the model to evaluate");
  auto [train_set, test_set] = resolve_data(cfg);
  (void)train_set;
  const AttackConfig a = attack_from(cfg, true);
  if (peek_model_kind(model_path) == ModelKind::kMoe) {
    const MoEModel m = load_moe(model_path);
    const EvalReport r = evaluate_single(m, test_set, a);
    write_eval_report_csv(dir + "/eval_report.csv", r);
    write_eval_summary(dir + "/eval_summary.txt", r);
    kv(out, "sa", r.sa);
    kv(out, "ra", r.ra);
    kv(out, "ra_e", r.ra_e);
    kv(out, "ra_r", r.ra_r);
  } else {
    const DualModel dm = load_dual(model_path);
    const DualEvalReport r = evaluate_dual(dm, test_set, a);
    write_eval_report_csv(dir + "/eval_report.csv", r);
    write_eval_summary(dir + "/eval_summary.txt", r);
    kv(out, "sa", r.sa);
    kv(out, "ra", r.ra);
    kv(out, "ra_rmoe", r.ra_rmoe);
    kv(out, "ra_smoe", r.ra_smoe);
  }
}

void cmd_certify(const RunConfig& cfg, const std::string& dir,
                 std::ostream& out) {
  const std::string model_path = need_path(cfg, "io.model", "the model to certify");
  auto [train_set, test_set] = resolve_data(cfg);
  (void)train_set;
  const bool densify = cfg.get_bool("certify.densify");
  const ModelKind kind = peek_model_kind(model_path);

  CertReport report;
  ProbsFn probs_fn;
  MoEModel moe;
  DualModel dual;
  if (kind == ModelKind::kMoe) {
    moe = load_moe(model_path);
    if (densify) moe = to_dense(moe);
    report = certify_dataset(moe, test_set);  // throws on top-k routing
    probs_fn = [&moe](std::span<const double> x) {
      Tensor xt = Tensor::constant({x.size()}, {x.begin(), x.end()});
      Tensor p = moe_forward(moe, xt, xt, ForwardView::kFull);
      return std::vector<double>(p.values().begin(), p.values().end());
    };
  } else {
    dual = load_dual(model_path);
    if (densify) {
      dual.standard = to_dense(dual.standard);
      dual.robust = to_dense(dual.robust);
    }
    report = certify_dataset(dual, test_set);
    probs_fn = [&dual](std::span<const double> x) {
      Tensor xt = Tensor::constant({x.size()}, {x.begin(), x.end()});
      Tensor p = dual_forward(dual, xt, xt, ForwardView::kFull);
      return std::vector<double>(p.values().begin(), p.values().end());
    };
  }
  write_cert_report_csv(dir + "/cert_report.csv", report);

  std::vector<double> singles;
  std::size_t clamped = 0;
  for (const auto& row : report.rows) {
    if (std::isfinite(row.eps_l2_single)) singles.push_back(row.eps_l2_single);
    if (row.clamped) ++clamped;
  }
  kv(out, "median_eps_l2_single", median(singles));
  kv(out, "clamped_fraction",
     static_cast<double>(clamped) / static_cast<double>(report.rows.size()));

  const int trials = static_cast<int>(cfg.get_int("certify.soundness_trials"));
  if (trials > 0) {
    // The dual bound certifies the combined model, the single bound the plain
    // one; probe whichever radius the report's model kind stands behind.
    std::size_t checked = 0, failed = 0;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      const auto& row = report.rows[i];
      const double eps = kind == ModelKind::kMoe ? row.eps_l2_single : row.eps_l2_dual;
      if (!(eps > 0.0) || !std::isfinite(eps)) continue;
      const auto x = test_set.X.begin() + static_cast<long>(i * test_set.d);
      const std::vector<double> xv(x, x + static_cast<long>(test_set.d));
      const SoundnessResult sr =
          soundness_check(probs_fn, xv, test_set.y[i], eps, trials,
                          derive_seed(cfg.get_u64("seed"), "soundness", i));
      ++checked;
      if (!sr.pass) ++failed;
    }
    kv(out, "soundness_checked", static_cast<double>(checked));
    kv(out, "soundness_failed", static_cast<double>(failed));
    if (failed > 0)
      throw std::runtime_error(
          "certify: soundness probe found an argmax flip inside a certified "
          "ball; this is a bug, see " + dir + "/cert_report.csv");
  }
}

void cmd_jtdmoe(const RunConfig& cfg, const std::string& dir,
                std::ostream& out) {
  const std::string std_path = need_path(cfg, "io.standard", "the standard sub-model");
  const std::string rob_path = need_path(cfg, "io.robust", "the robust sub-model");
  auto [train_set, test_set] = resolve_data(cfg);
  DualModel dm = make_dual(load_moe(std_path), load_moe(rob_path),
                           cfg.get_double("dual.alpha"));
  const TrainConfig tc = train_from(cfg);
  const TrainReport report = jtdmoe(dm, train_set, test_set, tc);
  save_model(dir + "/model.txt", dm);
  write_train_report_csv(dir + "/train_report.csv", report);
  const EpochStats& last = report.epochs.back();
  kv(out, "final_sa", last.sa);
  kv(out, "final_ra", last.ra);
  kv(out, "model", dir + "/model.txt");
}

void cmd_report(const RunConfig& cfg, const std::string& dir,
                std::ostream& out) {
  const std::string a_path = need_path(cfg, "io.model", "the baseline model");
  const std::string b_path = need_path(cfg, "io.model_b", "the comparison model");
  auto [train_set, test_set] = resolve_data(cfg);
  (void)train_set;
  const MoEModel a = load_moe(a_path);
  const MoEModel b = load_moe(b_path);
  const MarginReport r = margin_report(a, b, test_set);
  write_margin_report_csv(dir + "/margin_report.csv", r);
  double worst = 0.0;
  bool first = true;
  for (const auto& row : r.rows) {
    if (row.missing) continue;
    if (first || row.delta < worst) worst = row.delta;
    first = false;
  }
  kv(out, "worst_class_margin_delta", worst);
  kv(out, "margin_report", dir + "/margin_report.csv");
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> kNames = {
      "gen-data", "train", "attack", "certify", "eval", "jtdmoe", "report"};
  return kNames;
}

std::string make_run_dir(const RunConfig& cfg) {
  const fs::path parent = cfg.get_string("out");
  fs::create_directories(parent);
  const std::string stem =
      cfg.hash_hex() + "-s" + std::to_string(cfg.get_u64("seed"));
  fs::path dir = parent / stem;
  for (int retry = 2; fs::exists(dir); ++retry) {
    if (retry > 9999)
      throw std::runtime_error("runner: too many runs named " + stem);
    dir = parent / (stem + "-r" + std::to_string(retry));
  }
  fs::create_directory(dir);
  return dir.string();
}

std::string manifest_text(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "manifest.txt") continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::ostringstream out;
  char buf[17];
  for (const auto& name : names) {
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(
                      file_checksum(fs::path(dir) / name)));
    out << buf << ' ' << name << '\n';
  }
  return out.str();
}

void write_manifest(const std::string& dir) {
  std::ofstream out(dir + "/manifest.txt");
  if (!out) throw std::runtime_error(dir + "/manifest.txt: cannot write");
  out << manifest_text(dir);
}

void run_subcommand(const std::string& name, const RunConfig& cfg,
                    std::ostream& out) {
  cfg.validate();
  const auto& known = subcommands();
  if (std::find(known.begin(), known.end(), name) == known.end())
    throw std::invalid_argument("runner: unknown subcommand '" + name + "'");

  const std::string dir = make_run_dir(cfg);
  kv(out, "run_dir", dir);
  write_config_echo(dir, cfg);

  if (name == "gen-data") cmd_gen_data(cfg, dir, out);
  else if (name == "train") cmd_train(cfg, dir, out);
  else if (name == "attack") cmd_attack(cfg, dir, out);
  else if (name == "certify") cmd_certify(cfg, dir, out);
  else if (name == "eval") cmd_eval(cfg, dir, out);
  else if (name == "jtdmoe") cmd_jtdmoe(cfg, dir, out);
  else cmd_report(cfg, dir, out);

  write_manifest(dir);
}

}  // namespace rmoe
