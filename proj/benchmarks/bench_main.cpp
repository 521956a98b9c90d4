#include <benchmark/benchmark.h>

#include "motor/eval_report.hpp"
#include "motor/quantizer.hpp"
#include "motor/synthetic.hpp"
#include "motor/tcn.hpp"
#include "motor/trainer.hpp"

using namespace motor;

namespace {

Matrix<float> gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<float> m(n, d);
  for (float& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

const InteractionDataset& planted_dataset() {
  static const InteractionDataset ds = build_dataset(generate_planted({}).edges, 1);
  return ds;
}

}  // namespace

static void BM_Kmeans(benchmark::State& state) {
  const auto points = gaussian(static_cast<std::size_t>(state.range(0)), 8, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(points, 256, 25, 3));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Kmeans)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);

static void BM_AssignTokens(benchmark::State& state) {
  const FeatureMatrix f{Modality::vision, gaussian(static_cast<std::size_t>(state.range(0)), 64, 2)};
  const auto cb = fit_pq(f, 8, 256, 10, 3);
  for (auto _ : state) benchmark::DoNotOptimize(assign_tokens(f, cb));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AssignTokens)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_SecondOrder(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto e = gaussian(n, 64, 3);
  const std::vector<float> w(n, 1.0f / static_cast<float>(n));
  for (auto _ : state) benchmark::DoNotOptimize(second_order<float>(e, w));
}
BENCHMARK(BM_SecondOrder)->Arg(8)->Arg(16)->Arg(32);

static void BM_TrainEpoch(benchmark::State& state) {
  const auto& ds = planted_dataset();
  const ModelConfig mc{static_cast<Backbone>(state.range(0)), ItemMode::id_based, TcnVariant::modal_specific, 64, 2};
  Model<float> model(mc, make_context(ds, {}, {}), 1);
  TrainConfig tc;
  tc.batch_size = 1024;
  auto adam = make_adam_state(model.params());
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(train_epoch(model, ds, tc, adam, rng));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.train_edges.size()));
}
BENCHMARK(BM_TrainEpoch)
    ->Arg(static_cast<int>(Backbone::bpr_mf))
    ->Arg(static_cast<int>(Backbone::lightgcn))
    ->Unit(benchmark::kMillisecond);

static void BM_Evaluate(benchmark::State& state) {
  const auto& ds = planted_dataset();
  const auto users = gaussian(ds.num_users, 64, 5), items = gaussian(ds.num_items, 64, 6);
  const std::size_t ks[] = {10, 20};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(users, items, ds, Split::test, ks));
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
