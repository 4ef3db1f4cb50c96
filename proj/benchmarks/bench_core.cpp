// Microbenchmarks for the hot paths: forward, backward, PGD, certification.

#include <benchmark/benchmark.h>

#include "rmoe/attack.hpp"
#include "rmoe/certify.hpp"
#include "rmoe/data.hpp"
#include "rmoe/moe.hpp"
#include "rmoe/ops.hpp"
#include "rmoe/train.hpp"

namespace {

using namespace rmoe;

MoEModel bench_model(Routing routing) {
  return make_moe(2, 2, 4, {16}, routing, 7);
}

Dataset bench_data(std::size_t n) {
  return gen_dataset(DataKind::kTwoMoons, n, 0.1, 11);
}

void BM_ForwardBatch(benchmark::State& state) {
  const MoEModel m = bench_model(Routing::top_k(1));
  const Dataset ds = bench_data(static_cast<std::size_t>(state.range(0)));
  const Tensor x = full_matrix(ds);
  for (auto _ : state) {
    Tensor out = moe_forward(m, x, x, ForwardView::kFull);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBatch)->Arg(64)->Arg(256)->Arg(1024);

void BM_TrainStep(benchmark::State& state) {
  MoEModel m = bench_model(Routing::top_k(1));
  const Dataset ds = bench_data(256);
  TrainConfig cfg;
  cfg.method = TrainMethod::kExpertRobust;
  cfg.beta = 1.0;
  cfg.batch_size = static_cast<int>(state.range(0));
  cfg.attack.epsilon = 0.2;
  cfg.attack.steps = 10;
  cfg.attack.step_size = 0.05;
  std::vector<int> batch(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<int>(i);
  std::uint64_t tag = 0;
  for (auto _ : state) {
    StepStats s = train_step(m, ds, batch, cfg, 0.01, tag++);
    benchmark::DoNotOptimize(s.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128);

void BM_Pgd(benchmark::State& state) {
  const MoEModel m = bench_model(Routing::top_k(1));
  const Dataset ds = bench_data(16);
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.steps = static_cast<int>(state.range(0));
  cfg.step_size = 0.05;
  cfg.restarts = 1;
  Tensor x = example_row(ds, 0);
  const AttackLossFn loss = make_attack_loss(m, x, ForwardView::kFull, ds.y[0]);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    AttackConfig c = cfg;
    c.seed = seed++;
    PgdResult r = pgd(loss, x, c);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_Pgd)->Arg(10)->Arg(50);

void BM_CertifyExample(benchmark::State& state) {
  const MoEModel m = bench_model(Routing::dense());
  const Dataset ds = bench_data(16);
  const LipschitzBudget b = budget(m);
  Tensor x = example_row(ds, 0);
  for (auto _ : state) {
    CertValue v = certify_single(m, x, ds.y[0], b);
    benchmark::DoNotOptimize(v.eps2);
  }
}
BENCHMARK(BM_CertifyExample);

void BM_BudgetAssembly(benchmark::State& state) {
  const MoEModel m = bench_model(Routing::dense());
  for (auto _ : state) {
    LipschitzBudget b = budget(m);
    benchmark::DoNotOptimize(b.L.data());
  }
}
BENCHMARK(BM_BudgetAssembly);

}  // namespace

BENCHMARK_MAIN();
