#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "motor/backbones.hpp"
#include "motor/dataset.hpp"
#include "motor/matrix.hpp"
#include "motor/quantizer.hpp"

namespace motor {

enum class Split { validation, test };

/// Items sorted by descending score, ties by ascending index, with the
/// sorted `exclusions` removed.
std::vector<std::uint32_t> rank_items_for_user(std::span<const float> scores,
                                               std::span<const std::uint32_t> exclusions);

/// |top-k ∩ relevant| / |relevant|; empty relevant gives 0.
double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                   std::size_t k);

/// Binary-relevance NDCG with IDCG truncated at min(k, |relevant|).
double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                 std::size_t k);

struct UserMetrics {
  std::uint32_t user = 0;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
};

struct EvalResult {
  std::size_t num_evaluated_users = 0;
  std::map<std::size_t, double> recall;  // keyed by K
  std::map<std::size_t, double> ndcg;
  std::vector<UserMetrics> per_user;
};

/// Full-ranking evaluation. Validation excludes train items; test excludes
/// train and validation items. Users without held-out items are skipped.
EvalResult evaluate(const Matrix<float>& users, const Matrix<float>& items,
                    const InteractionDataset& dataset, Split split, std::span<const std::size_t> ks);

/// Items grouped by train degree in [lo, hi].
struct Bucket {
  std::string label;
  std::size_t lo = 0;
  std::size_t hi = std::numeric_limits<std::size_t>::max();
};

/// 0-5, 6-10, 11-20, 21-50, 51+.
std::vector<Bucket> default_buckets();

struct BucketMetrics {
  std::string label;
  std::size_t num_items = 0;  // distinct held-out items in the bucket
  std::size_t num_users = 0;  // users with a non-empty restricted set
  double recall = 0.0;
  double ndcg = 0.0;
};

/// Recall/NDCG@k with each user's relevant set restricted to one bucket.
std::vector<BucketMetrics> bucket_analysis(const Matrix<float>& users, const Matrix<float>& items,
                                           const InteractionDataset& dataset, Split split,
                                           std::span<const Bucket> buckets, std::size_t k = 20);

struct ParameterAudit {
  std::size_t user_params = 0;
  std::size_t item_side_params = 0;  // ID table or token tables
  std::size_t tcn_params = 0;
  std::size_t backbone_extra_params = 0;
  std::size_t id_based_equivalent = 0;  // N x d
  double ratio = 0.0;                   // item_side_params / id_based_equivalent
};

/// Parameter counts from shape formulas alone.
struct AuditShape {
  ItemMode mode = ItemMode::id_free;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t dim = 64;
  std::vector<std::size_t> slots_per_modality;
  std::size_t codebook_size = 256;
  std::size_t tcn_params = 0;
  std::size_t backbone_extra_params = 0;
};

ParameterAudit parameter_audit(const AuditShape& shape);

/// Shape of an instantiated model, for comparing against its allocations.
template <typename T>
AuditShape audit_shape(const Model<T>& model);

/// Items ranked by the number of (modality, slot) positions whose token
/// equals the query's. The query itself is excluded.
std::vector<std::pair<std::uint32_t, std::size_t>> retrieve_similar_by_tokens(
    std::span<const TokenAssignment> assignments, std::size_t query, std::size_t top_n);

struct MetricsReport {
  std::string split = "test";
  std::size_t num_evaluated_users = 0;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::vector<BucketMetrics> buckets;
  ParameterAudit audit;
};

/// Single JSON document: run_id, timestamp, config echo, metrics, buckets,
/// audit. `config_json` must be a JSON document; run_id is derived from it.
std::string report_to_json(const MetricsReport& report, const std::string& config_json,
                           const std::string& timestamp);

/// "user<TAB>recall@K...<TAB>ndcg@K..." per evaluated user, with header.
std::string per_user_tsv(const EvalResult& result, std::span<const std::string> user_ids);

/// 64-bit FNV-1a as 16 hex digits.
std::string stable_hash_hex(std::string_view data);

}  // namespace motor
