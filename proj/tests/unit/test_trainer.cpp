#include <cmath>
#include <map>

#include "doctest.h"
#include "json.hpp"
#include "motor/parallel.hpp"
#include "motor/synthetic.hpp"
#include "motor/trainer.hpp"

using namespace motor;

namespace {

std::shared_ptr<const ModelContext> id_context(const InteractionDataset& ds) { return make_context(ds, {}, {}); }

std::vector<TokenAssignment> random_tokens(const InteractionDataset& ds, std::size_t slots, std::size_t k,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenAssignment> out;
  for (Modality m : {Modality::vision, Modality::text}) {
    TokenAssignment ta{m, k, Matrix<std::uint32_t>(ds.num_items, slots)};
    for (auto& t : ta.tokens.values()) t = static_cast<std::uint32_t>(rng.uniform_index(k));
    out.push_back(ta);
  }
  return out;
}

InteractionDataset planted_dataset(std::uint64_t seed) {
  PlantedConfig pc;
  pc.num_users = 300;
  pc.num_items = 120;
  pc.num_clusters = 6;
  pc.seed = seed;
  return build_dataset(generate_planted(pc).edges, seed);
}

}  // namespace

TEST_CASE("negatives avoid the user's train items") {
  // users with fewer than three edges keep everything in train
  const auto ds = build_dataset(std::vector<RawEdge>{{"a", "x0"}, {"b", "x1"}, {"b", "x2"}}, 1);
  REQUIRE(ds.num_items == 3);
  Rng rng(2);
  const auto batch = sample_triplets(ds, 3000, rng);
  CHECK(batch.size() == 3000);
  for (const auto& t : batch) {
    CHECK(ds.has_train_edge(t.user, t.pos));
    CHECK(!ds.has_train_edge(t.user, t.neg));
    if (t.user == 0) CHECK(t.neg != 0);
  }
}

TEST_CASE("negatives are uniform over the complement") {
  const auto ds = build_dataset(
      std::vector<RawEdge>{{"a", "x0"}, {"b", "x1"}, {"b", "x2"}, {"c", "x3"}}, 1);
  Rng rng(3);
  const auto batch = sample_triplets(ds, 100000, rng);
  std::map<std::uint32_t, double> counts;
  double n = 0;
  for (const auto& t : batch) {
    if (t.user != 0) continue;
    counts[t.neg] += 1;
    n += 1;
  }
  REQUIRE(counts.size() == 3);
  const double p = 1.0 / 3.0, sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [item, c] : counts) CHECK(std::abs(c - n * p) < 3.0 * sigma);
}

TEST_CASE("sampling errors") {
  InteractionDataset empty;
  empty.num_users = 1;
  empty.num_items = 2;
  empty.user_adjacency.resize(1);
  Rng rng(1);
  CHECK_THROWS_AS(sample_triplets(empty, 4, rng), DataError);

  const auto full = build_dataset(std::vector<RawEdge>{{"a", "x0"}, {"a", "x1"}}, 1);
  CHECK_THROWS_AS(sample_triplets(full, 4, rng), DataError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto ds = planted_dataset(1);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_free, TcnVariant::modal_specific, 8, 2};
  Model<float> m(mc, make_context(ds, random_tokens(ds, 2, 4, 1), {}), 3);
  const auto before = m.params();
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.batch_size = 256;
  auto adam = make_adam_state(m.params());
  Rng rng(4);
  train_epoch(m, ds, tc, adam, rng);
  const auto a = before.blocks();
  const auto b = m.params().blocks();
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::equal(a[k].values.begin(), a[k].values.end(), b[k].values.begin()));
  }
  CHECK(adam.step == (ds.train_edges.size() + 255) / 256);
}

TEST_CASE("a repeated triplet is overfit") {
  const auto ds = planted_dataset(2);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_free, TcnVariant::modal_agnostic, 8, 2};
  Model<float> m(mc, make_context(ds, random_tokens(ds, 2, 4, 2), {}), 5);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  auto adam = make_adam_state(m.params());
  const Edge e = ds.train_edges[0];
  std::uint32_t neg = 0;
  while (ds.has_train_edge(e.user, neg)) ++neg;
  const std::vector<Triplet> batch{{e.user, e.item, neg}};
  auto grads = m.make_gradients();
  double prev = std::numeric_limits<double>::infinity();
  double loss = prev;
  for (int step = 0; step < 200 && loss >= 0.1; ++step) {
    grads.clear();
    loss = m.loss_and_gradients(batch, 0.0f, grads);
    CHECK(loss < prev);
    prev = loss;
    adam_step(m.params(), grads, adam, tc);
  }
  CHECK(loss < 0.1);
}

TEST_CASE("a step only changes token rows used by the batch") {
  const auto ds = planted_dataset(3);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_free, TcnVariant::modal_specific, 4, 2};
  Model<float> m(mc, make_context(ds, random_tokens(ds, 2, 16, 3), {}), 6);
  const auto before = m.params();
  TrainConfig tc;
  tc.learning_rate = 0.05;
  auto adam = make_adam_state(m.params());
  Rng rng(7);
  const auto batch = sample_triplets(ds, 4, rng);
  auto grads = m.make_gradients();
  m.loss_and_gradients(batch, 0.0f, grads);
  adam_step(m.params(), grads, adam, tc);

  const auto& ctx = m.context();
  for (std::size_t s = 0; s < ctx.layout.total_slots(); ++s) {
    std::vector<bool> used(16, false);
    for (const auto& t : batch) {
      for (auto item : {t.pos, t.neg}) used[token_at(ctx.tokens, ctx.layout, item, s)] = true;
    }
    for (std::size_t r = 0; r < 16; ++r) {
      const auto a = before.token_tables.tables[s].row(r);
      const auto b = m.params().token_tables.tables[s].row(r);
      const bool same = std::equal(a.begin(), a.end(), b.begin());
      if (!used[r]) CHECK(same);
    }
  }
  std::vector<bool> user_used(ds.num_users, false);
  for (const auto& t : batch) user_used[t.user] = true;
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    if (user_used[u]) continue;
    const auto a = before.user_embeddings.row(u);
    CHECK(std::equal(a.begin(), a.end(), m.params().user_embeddings.row(u).begin()));
  }
}

TEST_CASE("training is deterministic across thread counts") {
  const auto ds = planted_dataset(4);
  ModelConfig mc{Backbone::lightgcn, ItemMode::id_free, TcnVariant::modal_specific, 8, 2};
  const auto ctx = make_context(ds, random_tokens(ds, 2, 8, 4), {});
  TrainConfig tc;
  tc.batch_size = 512;
  tc.learning_rate = 0.01;
  std::vector<std::vector<double>> losses;
  std::vector<ModelParams<float>> finals;
  for (std::size_t threads : {1u, 3u}) {
    set_num_threads(threads);
    Model<float> m(mc, ctx, 11);
    auto adam = make_adam_state(m.params());
    Rng rng(12);
    std::vector<double> l;
    for (int e = 0; e < 3; ++e) l.push_back(train_epoch(m, ds, tc, adam, rng));
    losses.push_back(l);
    finals.push_back(m.params());
  }
  set_num_threads(0);
  CHECK(losses[0] == losses[1]);
  const auto a = finals[0].blocks();
  const auto b = finals[1].blocks();
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::equal(a[k].values.begin(), a[k].values.end(), b[k].values.begin()));
}

TEST_CASE("early stopping rule") {
  const auto ds = planted_dataset(5);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_based, TcnVariant::modal_specific, 4, 2};
  Model<float> m(mc, id_context(ds), 1);
  TrainConfig tc;
  tc.patience = 1;
  tc.max_epochs = 10;
  tc.batch_size = 4096;
  const std::vector<double> script{0.1, 0.5, 0.4, 0.3};
  ModelParams<float> after_epoch1;
  std::size_t calls = 0;
  const auto r = fit(m, ds, tc, [&](const Model<float>& model, std::size_t epoch) {
    ++calls;
    if (epoch == 1) after_epoch1 = model.params();
    return ValidationMetrics{script.at(epoch), 0.0};
  });
  CHECK(calls == 3);
  CHECK(r.log.size() == 2);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 1);
  CHECK(r.best.recall20 == 0.5);
  CHECK(m.params().user_embeddings == after_epoch1.user_embeddings);
}

TEST_CASE("zero epochs evaluates once and keeps the initial model") {
  const auto ds = planted_dataset(6);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_based, TcnVariant::modal_specific, 4, 2};
  Model<float> m(mc, id_context(ds), 1);
  const auto init = m.params().user_embeddings;
  TrainConfig tc;
  tc.max_epochs = 0;
  std::size_t calls = 0;
  const auto r = fit(m, ds, tc, [&](const Model<float>&, std::size_t) {
    ++calls;
    return ValidationMetrics{0.2, 0.1};
  });
  CHECK(calls == 1);
  CHECK(r.log.empty());
  CHECK(r.best_epoch == 0);
  CHECK(m.params().user_embeddings == init);
}

TEST_CASE("fit improves validation recall on planted data and needs a val split") {
  const auto ds = planted_dataset(7);
  ModelConfig mc{Backbone::bpr_mf, ItemMode::id_based, TcnVariant::modal_specific, 16, 2};
  Model<float> m(mc, id_context(ds), 1);
  TrainConfig tc;
  tc.max_epochs = 30;
  tc.batch_size = 512;
  tc.learning_rate = 0.01;
  const auto r = fit(m, ds, tc);
  CHECK(r.best.recall20 > r.initial.recall20);
  for (const auto& e : r.log) CHECK(std::isfinite(e.loss));

  const auto no_val = build_dataset(std::vector<RawEdge>{{"a", "x"}, {"a", "y"}, {"b", "x"}}, 1);
  Model<float> small(mc, id_context(no_val), 1);
  CHECK_THROWS_AS(fit(small, no_val, tc), DataError);
}

TEST_CASE("log lines are JSON objects") {
  const auto j = nlohmann::json::parse(to_json_line({3, 0.25, 0.5, 0.125, 1.5}));
  CHECK(j["epoch"] == 3);
  CHECK(j["loss"] == 0.25);
  CHECK(j["val_recall@20"] == 0.5);
  CHECK(j["val_ndcg@20"] == 0.125);
  CHECK(j["seconds"] == 1.5);
}
