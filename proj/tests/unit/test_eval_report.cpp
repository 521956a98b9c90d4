#include <set>

#include "doctest.h"
#include "json.hpp"
#include "motor/eval_report.hpp"
#include "oracles.hpp"

using namespace motor;

namespace {

std::vector<std::uint32_t> as_vec(const std::set<std::uint32_t>& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("ranking order, exclusions and ties") {
  const std::vector<float> s{0.1f, 0.9f, 0.5f};
  CHECK(rank_items_for_user(s, {}) == std::vector<std::uint32_t>{1, 2, 0});
  const std::vector<std::uint32_t> ex{2};
  CHECK(rank_items_for_user(s, ex) == std::vector<std::uint32_t>{1, 0});
  const std::vector<float> tie{0.5f, 0.5f, 0.7f, 0.5f};
  CHECK(rank_items_for_user(tie, {}) == std::vector<std::uint32_t>{2, 0, 1, 3});
}

TEST_CASE("metric examples") {
  const std::vector<std::uint32_t> ranked{5, 3, 8, 1, 0, 2, 4, 6, 7, 9, 10};
  const std::vector<std::uint32_t> two{3, 5};
  CHECK(recall_at_k(ranked, two, 10) == 1.0);
  const std::vector<std::uint32_t> four{1, 9, 10, 11};
  CHECK(recall_at_k(ranked, four, 4) == 0.25);
  const std::vector<std::uint32_t> first{5};
  CHECK(ndcg_at_k(ranked, first, 10) == 1.0);
  const std::vector<std::uint32_t> third{8};
  CHECK(ndcg_at_k(ranked, third, 10) == 0.5);
  const std::vector<std::uint32_t> missing{10};
  CHECK(ndcg_at_k(ranked, missing, 5) == 0.0);
  const std::vector<std::uint32_t> perfect{5, 3, 8};
  CHECK(ndcg_at_k(ranked, perfect, 10) == doctest::Approx(1.0));
}

TEST_CASE("metrics match the exhaustive reference") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(20);
    std::vector<float> scores(n);
    for (float& x : scores) x = static_cast<float>(rng.uniform_index(6));  // many ties
    std::set<std::uint32_t> excluded, relevant;
    for (std::uint32_t i = 0; i < n; ++i) {
      const double u = rng.uniform01();
      if (u < 0.2) excluded.insert(i);
      else if (u < 0.5) relevant.insert(i);
    }
    if (relevant.empty()) continue;
    const auto ranked = rank_items_for_user(scores, as_vec(excluded));
    const auto pos = oracle::positions(scores, excluded);
    const auto rel = as_vec(relevant);
    double prev_recall = 0.0;
    for (std::size_t k : {1u, 3u, 5u, 10u, 20u}) {
      const double r = recall_at_k(ranked, rel, k);
      CHECK(r == oracle::recall(pos, relevant, k));
      CHECK(ndcg_at_k(ranked, rel, k) == doctest::Approx(oracle::ndcg(pos, relevant, k)).epsilon(1e-12));
      CHECK(r >= prev_recall);
      CHECK(r <= 1.0);
      prev_recall = r;
    }
  }
}

namespace {

InteractionDataset toy_dataset(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RawEdge> edges;
  for (int u = 0; u < 40; ++u) {
    for (int i = 0; i < 60; ++i) {
      const double p = i < 10 ? 0.6 : 0.15;
      if (rng.uniform01() < p) edges.push_back({"u" + std::to_string(u), "i" + std::to_string(i)});
    }
  }
  return build_dataset(edges, seed);
}

Matrix<float> random_float(std::size_t r, std::size_t c, Rng& rng) {
  Matrix<float> m(r, c);
  for (float& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("evaluate equals a per-user recomputation") {
  const auto ds = toy_dataset(2);
  Rng rng(3);
  const auto users = random_float(ds.num_users, 4, rng);
  const auto items = random_float(ds.num_items, 4, rng);
  const std::vector<std::size_t> ks{10, 20};
  for (auto split : {Split::validation, Split::test}) {
    const auto r = evaluate(users, items, ds, split, ks);
    double sum_r = 0, sum_n = 0;
    std::size_t evaluated = 0;
    for (std::uint32_t u = 0; u < ds.num_users; ++u) {
      const auto& held = split == Split::test ? ds.user_test_items[u] : ds.user_val_items[u];
      if (held.empty()) continue;
      std::set<std::uint32_t> ex(ds.user_adjacency[u].begin(), ds.user_adjacency[u].end());
      if (split == Split::test) ex.insert(ds.user_val_items[u].begin(), ds.user_val_items[u].end());
      std::vector<float> scores(ds.num_items);
      for (std::size_t i = 0; i < ds.num_items; ++i) {
        float s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += users(u, k) * items(i, k);
        scores[i] = s;
      }
      const auto pos = oracle::positions(scores, ex);
      const std::set<std::uint32_t> rel(held.begin(), held.end());
      sum_r += oracle::recall(pos, rel, 20);
      sum_n += oracle::ndcg(pos, rel, 20);
      ++evaluated;
    }
    CHECK(r.num_evaluated_users == evaluated);
    CHECK(r.recall.at(20) == doctest::Approx(sum_r / evaluated).epsilon(1e-9));
    CHECK(r.ndcg.at(20) == doctest::Approx(sum_n / evaluated).epsilon(1e-9));
    CHECK(r.recall.at(10) <= r.recall.at(20));
    CHECK(r.per_user.size() == evaluated);
  }
}

TEST_CASE("bucket boundaries and partition") {
  const auto b = default_buckets();
  REQUIRE(b.size() == 5);
  auto bucket_of = [&](std::size_t deg) {
    for (std::size_t k = 0; k < b.size(); ++k) if (deg >= b[k].lo && deg <= b[k].hi) return k;
    return b.size();
  };
  CHECK(bucket_of(0) == 0);
  CHECK(bucket_of(5) == 0);
  CHECK(bucket_of(6) == 1);
  CHECK(bucket_of(10) == 1);
  CHECK(bucket_of(11) == 2);
  CHECK(bucket_of(20) == 2);
  CHECK(bucket_of(21) == 3);
  CHECK(bucket_of(50) == 3);
  CHECK(bucket_of(51) == 4);

  const auto ds = toy_dataset(4);
  Rng rng(5);
  const auto users = random_float(ds.num_users, 3, rng);
  const auto items = random_float(ds.num_items, 3, rng);
  const auto metrics = bucket_analysis(users, items, ds, Split::test, b);
  std::set<std::uint32_t> test_items;
  for (const auto& e : ds.test_edges) test_items.insert(e.item);
  std::size_t total = 0;
  for (const auto& m : metrics) {
    total += m.num_items;
    CHECK(m.recall >= 0.0);
    CHECK(m.recall <= 1.0);
  }
  CHECK(total == test_items.size());

  // one catch-all bucket reproduces the overall metric
  const std::vector<Bucket> all{{"all", 0, std::numeric_limits<std::size_t>::max()}};
  const auto whole = bucket_analysis(users, items, ds, Split::test, all, 20);
  const std::vector<std::size_t> ks{20};
  const auto overall = evaluate(users, items, ds, Split::test, ks);
  CHECK(whole[0].recall == doctest::Approx(overall.recall.at(20)));
  CHECK(whole[0].ndcg == doctest::Approx(overall.ndcg.at(20)));
}

TEST_CASE("bucket metrics match an independent recomputation") {
  const auto ds = toy_dataset(6);
  Rng rng(7);
  const auto users = random_float(ds.num_users, 3, rng);
  const auto items = random_float(ds.num_items, 3, rng);
  const auto b = default_buckets();
  const auto metrics = bucket_analysis(users, items, ds, Split::test, b, 20);
  for (std::size_t k = 0; k < b.size(); ++k) {
    double sum = 0;
    std::size_t n = 0;
    for (std::uint32_t u = 0; u < ds.num_users; ++u) {
      std::set<std::uint32_t> rel;
      for (auto i : ds.user_test_items[u]) {
        if (ds.item_train_degree[i] >= b[k].lo && ds.item_train_degree[i] <= b[k].hi) rel.insert(i);
      }
      if (rel.empty()) continue;
      std::set<std::uint32_t> ex(ds.user_adjacency[u].begin(), ds.user_adjacency[u].end());
      ex.insert(ds.user_val_items[u].begin(), ds.user_val_items[u].end());
      std::vector<float> scores(ds.num_items);
      for (std::size_t i = 0; i < ds.num_items; ++i) {
        float s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += users(u, c) * items(i, c);
        scores[i] = s;
      }
      sum += oracle::recall(oracle::positions(scores, ex), rel, 20);
      ++n;
    }
    CHECK(metrics[k].num_users == n);
    if (n > 0) CHECK(metrics[k].recall == doctest::Approx(sum / n).epsilon(1e-9));
  }
}

TEST_CASE("parameter audit formulas") {
  AuditShape s;
  s.mode = ItemMode::id_free;
  s.num_items = 38140;
  s.dim = 64;
  s.slots_per_modality = {8, 8};
  s.codebook_size = 256;
  const auto a = parameter_audit(s);
  CHECK(a.item_side_params == 262144);
  CHECK(a.id_based_equivalent == 2440960);
  CHECK(std::abs(a.ratio - 262144.0 / 2440960.0) < 1e-12);

  AuditShape tiny;
  tiny.num_items = 10;
  tiny.dim = 5;
  tiny.slots_per_modality = {1};
  tiny.codebook_size = 1;
  CHECK(parameter_audit(tiny).item_side_params == 5);

  AuditShape based = s;
  based.mode = ItemMode::id_based;
  CHECK(parameter_audit(based).ratio == 1.0);
}

TEST_CASE("token retrieval") {
  std::vector<TokenAssignment> as;
  as.push_back({Modality::vision, 4, Matrix<std::uint32_t>(4, 2, std::vector<std::uint32_t>{1, 2, 1, 2, 3, 3, 1, 0})});
  as.push_back({Modality::text, 4, Matrix<std::uint32_t>(4, 2, std::vector<std::uint32_t>{0, 1, 0, 1, 2, 2, 0, 3})});
  const auto r = retrieve_similar_by_tokens(as, 0, 3);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == std::pair<std::uint32_t, std::size_t>{1, 4});
  CHECK(r[1] == std::pair<std::uint32_t, std::size_t>{3, 2});
  CHECK(r[2] == std::pair<std::uint32_t, std::size_t>{2, 0});
  CHECK(retrieve_similar_by_tokens(as, 0, 0).empty());

  Rng rng(8);
  std::vector<TokenAssignment> big;
  for (Modality m : {Modality::vision, Modality::text}) {
    TokenAssignment ta{m, 3, Matrix<std::uint32_t>(50, 3)};
    for (auto& t : ta.tokens.values()) t = static_cast<std::uint32_t>(rng.uniform_index(3));
    big.push_back(ta);
  }
  const auto got = retrieve_similar_by_tokens(big, 7, 49);
  std::vector<std::pair<std::uint32_t, std::size_t>> ref;
  for (std::uint32_t i = 0; i < 50; ++i) {
    if (i == 7) continue;
    std::size_t same = 0;
    for (const auto& ta : big) for (std::size_t x = 0; x < 3; ++x) same += ta.tokens(i, x) == ta.tokens(7, x);
    ref.push_back({i, same});
  }
  std::stable_sort(ref.begin(), ref.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  CHECK(got == ref);
}

TEST_CASE("report json layout") {
  MetricsReport rep;
  rep.num_evaluated_users = 3;
  rep.recall = {{10, 0.5}, {20, 0.75}};
  rep.ndcg = {{10, 0.25}, {20, 0.3}};
  rep.buckets.push_back({"0-5", 2, 3, 0.5, 0.4});
  const auto text = report_to_json(rep, R"({"seed":1})", "2024-01-01T00:00:00Z");
  const auto j = nlohmann::json::parse(text);
  CHECK(j["metrics"].size() == 4);
  CHECK(j["metrics"]["recall@10"] == 0.5);
  CHECK(j["metrics"]["ndcg@20"] == 0.3);
  CHECK(j["config"]["seed"] == 1);
  CHECK(j["timestamp"] == "2024-01-01T00:00:00Z");
  CHECK(j["run_id"] == stable_hash_hex(nlohmann::json::parse(R"({"seed":1})").dump()));
  CHECK(report_to_json(rep, R"({"seed":1})", "later") != text);
  CHECK(stable_hash_hex("") == "cbf29ce484222325");
}
