#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "motor/common.hpp"
#include "motor/matrix.hpp"

namespace motor {

/// One interaction as it appears in the input file.
struct RawEdge {
  std::string user;
  std::string item;
  friend bool operator==(const RawEdge&, const RawEdge&) = default;
};

/// Reads "user<TAB>item" lines. Duplicate pairs are collapsed, keeping the
/// first occurrence; blank lines are skipped. Throws ParseError on a line
/// that does not have exactly two tab-separated fields.
std::vector<RawEdge> load_interactions(const std::filesystem::path& path);
std::vector<RawEdge> parse_interactions(std::string_view text);

struct Edge {
  std::uint32_t user;
  std::uint32_t item;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Users, items, and the per-user 8:1:1 split of their interactions.
///
/// Dense indices follow first appearance in the input. Items that end up
/// with no training interaction are removed (together with their val/test
/// edges) and the survivors are re-indexed, preserving order. Users always
/// keep at least one training edge, so none are removed.
struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;

  std::vector<Edge> train_edges;
  std::vector<Edge> val_edges;
  std::vector<Edge> test_edges;

  /// Sorted train item indices per user (the training graph).
  std::vector<std::vector<std::uint32_t>> user_adjacency;
  /// Sorted train user indices per item.
  std::vector<std::vector<std::uint32_t>> item_adjacency;
  std::vector<std::size_t> item_train_degree;

  /// Sorted held-out items per user.
  std::vector<std::vector<std::uint32_t>> user_val_items;
  std::vector<std::vector<std::uint32_t>> user_test_items;

  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  /// Position of each surviving item in first-appearance order over the
  /// raw input; feature files are row-aligned to that order.
  std::vector<std::size_t> item_raw_index;
  std::size_t raw_num_items = 0;

  /// Unique input edges removed because their item had no train edge.
  std::size_t filtered_edges = 0;
  std::size_t filtered_items = 0;

  bool has_train_edge(std::uint32_t user, std::uint32_t item) const;
};

/// Remaps ids, splits each user's edges 8:1:1 after a seeded shuffle
/// (val and test get floor(n/10) each, users with n < 3 keep everything in
/// train) and applies the train-side 1-core filter.
InteractionDataset build_dataset(std::span<const RawEdge> edges, std::uint64_t seed);

/// Writes "string_id<TAB>dense_index" lines.
void write_id_map(const std::filesystem::path& path, std::span<const std::string> ids);

/// Dense per-item feature matrix for one modality.
struct FeatureMatrix {
  Modality modality = Modality::vision;
  Matrix<float> data;

  std::size_t rows() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }
};

/// Loads a feature matrix from the binary "MFEA" format or, when the file
/// does not start with that magic, from CSV. Throws FormatError on a
/// header/row-count problem and DataError on a non-finite value.
FeatureMatrix load_feature_matrix(const std::filesystem::path& path, std::size_t expected_rows,
                                  Modality modality);

void save_feature_matrix(const std::filesystem::path& path, const Matrix<float>& data);

/// Selects the rows that correspond to the dataset's surviving items.
FeatureMatrix align_features(const FeatureMatrix& raw, const InteractionDataset& dataset);

}  // namespace motor
