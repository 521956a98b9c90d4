#include "motor/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "motor/parallel.hpp"

namespace motor {
namespace {

bool contains(std::span<const std::uint32_t> sorted, std::uint32_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

// Returns `relevant` itself when already sorted, else a sorted copy held in `storage`.
std::span<const std::uint32_t> sorted_view(std::span<const std::uint32_t> relevant,
                                           std::vector<std::uint32_t>& storage) {
  if (std::is_sorted(relevant.begin(), relevant.end())) return relevant;
  storage.assign(relevant.begin(), relevant.end());
  std::sort(storage.begin(), storage.end());
  return storage;
}

const std::vector<std::uint32_t>& held_out(const InteractionDataset& ds, Split split, std::size_t u) {
  return split == Split::validation ? ds.user_val_items[u] : ds.user_test_items[u];
}

std::vector<std::uint32_t> exclusions_for(const InteractionDataset& ds, Split split, std::size_t u) {
  std::vector<std::uint32_t> ex = ds.user_adjacency[u];
  if (split == Split::test) {
    const auto& val = ds.user_val_items[u];
    ex.insert(ex.end(), val.begin(), val.end());
    std::sort(ex.begin(), ex.end());
  }
  return ex;
}

// Top-k candidates under the same order as rank_items_for_user.
std::vector<std::uint32_t> top_k(std::span<const float> scores, std::span<const std::uint32_t> exclusions,
                                 std::size_t k) {
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!contains(exclusions, i)) candidates.push_back(i);
  }
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const std::size_t take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), better);
  candidates.resize(take);
  return candidates;
}

std::vector<float> user_scores(const Matrix<float>& users, const Matrix<float>& items, std::size_t u) {
  std::vector<float> s(items.rows());
  const auto hu = users.row(u);
  for (std::size_t i = 0; i < items.rows(); ++i) s[i] = score<float>(hu, items.row(i));
  return s;
}

double idcg(std::size_t n) {
  double total = 0.0;
  for (std::size_t p = 1; p <= n; ++p) total += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  return total;
}

// Top-kmax list per user that has held-out items; empty otherwise.
std::vector<std::vector<std::uint32_t>> ranked_users(const Matrix<float>& users, const Matrix<float>& items,
                                                     const InteractionDataset& ds, Split split,
                                                     std::size_t kmax) {
  if (users.cols() != items.cols()) throw ShapeError("user/item representation widths differ");
  std::vector<std::vector<std::uint32_t>> out(ds.num_users);
  parallel_for(0, ds.num_users, [&](std::size_t u) {
    if (held_out(ds, split, u).empty()) return;
    const auto scores = user_scores(users, items, u);
    out[u] = top_k(scores, exclusions_for(ds, split, u), kmax);
  });
  return out;
}

}  // namespace

std::vector<std::uint32_t> rank_items_for_user(std::span<const float> scores,
                                               std::span<const std::uint32_t> exclusions) {
  std::vector<std::uint32_t> order;
  order.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!contains(exclusions, i)) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  return order;
}

double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                   std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::vector<std::uint32_t> storage;
  relevant = sorted_view(relevant, storage);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p) hits += contains(relevant, ranked[p]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                 std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::vector<std::uint32_t> storage;
  relevant = sorted_view(relevant, storage);
  double dcg = 0.0;
  for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p) {
    if (contains(relevant, ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  return dcg / idcg(std::min(k, relevant.size()));
}

EvalResult evaluate(const Matrix<float>& users, const Matrix<float>& items,
                    const InteractionDataset& dataset, Split split, std::span<const std::size_t> ks) {
  const std::size_t kmax = ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  const auto ranked = ranked_users(users, items, dataset, split, kmax);
  EvalResult result;
  for (std::size_t k : ks) {
    result.recall[k] = 0.0;
    result.ndcg[k] = 0.0;
  }
  for (std::uint32_t u = 0; u < dataset.num_users; ++u) {
    const auto& relevant = held_out(dataset, split, u);
    if (relevant.empty()) continue;
    UserMetrics um;
    um.user = u;
    for (std::size_t k : ks) {
      um.recall[k] = recall_at_k(ranked[u], relevant, k);
      um.ndcg[k] = ndcg_at_k(ranked[u], relevant, k);
      result.recall[k] += um.recall[k];
      result.ndcg[k] += um.ndcg[k];
    }
    result.per_user.push_back(std::move(um));
  }
  result.num_evaluated_users = result.per_user.size();
  if (result.num_evaluated_users > 0) {
    const double inv = 1.0 / static_cast<double>(result.num_evaluated_users);
    for (auto& [k, v] : result.recall) v *= inv;
    for (auto& [k, v] : result.ndcg) v *= inv;
  }
  return result;
}

std::vector<Bucket> default_buckets() {
  return {{"0-5", 0, 5}, {"6-10", 6, 10}, {"11-20", 11, 20}, {"21-50", 21, 50},
          {"51+", 51, std::numeric_limits<std::size_t>::max()}};
}

std::vector<BucketMetrics> bucket_analysis(const Matrix<float>& users, const Matrix<float>& items,
                                           const InteractionDataset& dataset, Split split,
                                           std::span<const Bucket> buckets, std::size_t k) {
  const auto ranked = ranked_users(users, items, dataset, split, k);
  std::vector<BucketMetrics> out;
  for (const Bucket& bucket : buckets) {
    BucketMetrics bm;
    bm.label = bucket.label;
    auto in_bucket = [&](std::uint32_t i) {
      const std::size_t deg = dataset.item_train_degree[i];
      return deg >= bucket.lo && deg <= bucket.hi;
    };
    std::vector<std::uint8_t> seen(dataset.num_items, 0);
    double recall = 0.0, ndcg = 0.0;
    for (std::uint32_t u = 0; u < dataset.num_users; ++u) {
      std::vector<std::uint32_t> relevant;
      for (std::uint32_t i : held_out(dataset, split, u)) {
        if (!in_bucket(i)) continue;
        relevant.push_back(i);
        if (!seen[i]) {
          seen[i] = 1;
          ++bm.num_items;
        }
      }
      if (relevant.empty()) continue;
      ++bm.num_users;
      recall += recall_at_k(ranked[u], relevant, k);
      ndcg += ndcg_at_k(ranked[u], relevant, k);
    }
    if (bm.num_users > 0) {
      bm.recall = recall / static_cast<double>(bm.num_users);
      bm.ndcg = ndcg / static_cast<double>(bm.num_users);
    }
    out.push_back(std::move(bm));
  }
  return out;
}

ParameterAudit parameter_audit(const AuditShape& shape) {
  ParameterAudit a;
  a.user_params = shape.num_users * shape.dim;
  a.id_based_equivalent = shape.num_items * shape.dim;
  if (shape.mode == ItemMode::id_based) {
    a.item_side_params = a.id_based_equivalent;
  } else {
    const std::size_t slots =
        std::accumulate(shape.slots_per_modality.begin(), shape.slots_per_modality.end(), std::size_t{0});
    a.item_side_params = slots * shape.codebook_size * shape.dim;
    a.tcn_params = shape.tcn_params;
  }
  a.backbone_extra_params = shape.backbone_extra_params;
  a.ratio = a.id_based_equivalent == 0
                ? 0.0
                : static_cast<double>(a.item_side_params) / static_cast<double>(a.id_based_equivalent);
  return a;
}

template <typename T>
AuditShape audit_shape(const Model<T>& model) {
  AuditShape s;
  s.mode = model.config().mode;
  s.num_users = model.context().num_users;
  s.num_items = model.context().num_items;
  s.dim = model.config().dim;
  if (s.mode == ItemMode::id_free) {
    s.slots_per_modality = model.context().layout.slots;
    s.codebook_size = model.context().layout.codebook_size;
    s.tcn_params = model.params().tcn.parameter_count();
  }
  if (model.config().backbone == Backbone::vbpr) {
    s.backbone_extra_params = model.context().item_features.cols() * model.config().dim;
  }
  return s;
}

template AuditShape audit_shape(const Model<float>&);
template AuditShape audit_shape(const Model<double>&);

std::vector<std::pair<std::uint32_t, std::size_t>> retrieve_similar_by_tokens(
    std::span<const TokenAssignment> assignments, std::size_t query, std::size_t top_n) {
  if (assignments.empty()) return {};
  const std::size_t n = assignments[0].num_items();
  if (query >= n) throw ShapeError("query item " + std::to_string(query) + " out of range");
  std::vector<std::pair<std::uint32_t, std::size_t>> scored;
  scored.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (i == query) continue;
    std::size_t overlap = 0;
    for (const auto& ta : assignments) {
      for (std::size_t x = 0; x < ta.num_slots(); ++x) overlap += ta.tokens(i, x) == ta.tokens(query, x);
    }
    scored.emplace_back(i, overlap);
  }
  const std::size_t take = std::min(top_n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.second > b.second || (a.second == b.second && a.first < b.first);
                    });
  scored.resize(take);
  return scored;
}

std::string stable_hash_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string report_to_json(const MetricsReport& report, const std::string& config_json,
                           const std::string& timestamp) {
  using nlohmann::ordered_json;
  ordered_json j;
  const ordered_json config = ordered_json::parse(config_json);
  j["run_id"] = stable_hash_hex(config.dump());
  j["timestamp"] = timestamp;
  j["config"] = config;
  j["split"] = report.split;
  j["num_evaluated_users"] = report.num_evaluated_users;
  ordered_json metrics = ordered_json::object();
  for (const auto& [k, v] : report.recall) {
    metrics["recall@" + std::to_string(k)] = v;
    metrics["ndcg@" + std::to_string(k)] = report.ndcg.at(k);
  }
  j["metrics"] = metrics;
  ordered_json buckets = ordered_json::array();
  for (const auto& b : report.buckets) {
    buckets.push_back({{"range", b.label},
                       {"num_items", b.num_items},
                       {"num_users", b.num_users},
                       {"recall@20", b.recall},
                       {"ndcg@20", b.ndcg}});
  }
  j["buckets"] = buckets;
  const ParameterAudit& a = report.audit;
  j["audit"] = {{"user_params", a.user_params},
                {"item_side_params", a.item_side_params},
                {"tcn_params", a.tcn_params},
                {"backbone_extra_params", a.backbone_extra_params},
                {"id_based_equivalent", a.id_based_equivalent},
                {"ratio", a.ratio}};
  return j.dump(2) + "\n";
}

std::string per_user_tsv(const EvalResult& result, std::span<const std::string> user_ids) {
  std::ostringstream out;
  out << "user";
  for (const auto& [k, v] : result.recall) out << "\trecall@" << k;
  for (const auto& [k, v] : result.ndcg) out << "\tndcg@" << k;
  out << '\n';
  for (const auto& um : result.per_user) {
    out << user_ids[um.user];
    for (const auto& [k, v] : um.recall) out << '\t' << v;
    for (const auto& [k, v] : um.ndcg) out << '\t' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace motor
