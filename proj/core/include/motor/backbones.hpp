#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "motor/dataset.hpp"
#include "motor/matrix.hpp"
#include "motor/quantizer.hpp"
#include "motor/tcn.hpp"
#include "motor/token_store.hpp"

namespace motor {

enum class Backbone : std::uint8_t { bpr_mf = 0, lightgcn = 1, vbpr = 2 };
enum class ItemMode : std::uint8_t { id_based = 0, id_free = 1 };

std::string_view to_string(Backbone b);
std::string_view to_string(ItemMode m);
Backbone backbone_from_string(std::string_view s);
ItemMode item_mode_from_string(std::string_view s);

struct ModelConfig {
  Backbone backbone = Backbone::bpr_mf;
  ItemMode mode = ItemMode::id_free;
  TcnVariant tcn_variant = TcnVariant::modal_specific;
  std::size_t dim = 64;
  std::size_t layers = 2;  // LightGCN propagation depth
};

/// Training graph in CSR form with symmetric normalization weights
/// 1 / sqrt(deg(u) deg(i)).
struct Graph {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::size_t> user_offsets, item_offsets;
  std::vector<std::uint32_t> user_neighbors, item_neighbors;
  std::vector<double> user_weights, item_weights;
};

Graph build_graph(std::size_t num_users, std::size_t num_items, std::span<const Edge> edges);
Graph build_graph(const InteractionDataset& dataset);

/// Immutable data shared by every copy of a model.
struct ModelContext {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<TokenAssignment> tokens;  // canonical modality order
  TokenLayout layout;
  Matrix<float> item_features;  // N x (d_v + d_t), VBPR only
  Graph graph;
};

/// Builds a context; tokens are reordered canonically. Pass empty tokens
/// for ID-based models and empty features for non-VBPR models.
std::shared_ptr<const ModelContext> make_context(const InteractionDataset& dataset,
                                                 std::vector<TokenAssignment> tokens,
                                                 std::span<const FeatureMatrix> features);

/// Mutable view over one parameter array.
template <typename T>
struct ParamView {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool sparse = false;  // row-wise embedding table (sparse optimizer updates)
  std::span<T> values;
};

/// All trainable arrays of a model. Unused members stay empty.
template <typename T>
struct ModelParams {
  Matrix<T> user_embeddings;
  Matrix<T> item_embeddings;
  TokenEmbeddingTables<T> token_tables;
  TokenCrossNetwork<T> tcn;
  Matrix<T> vbpr_projection;  // (d_v + d_t) x d

  /// Every non-empty array in a fixed order: user table, item table, token
  /// tables (canonical), TCN arrays (group by group), VBPR projection.
  std::vector<ParamView<T>> blocks();
  std::vector<ParamView<const T>> blocks() const;
  std::size_t parameter_count() const;
};

struct Triplet {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};

/// Gradient buffers shaped like ModelParams, plus the rows of each sparse
/// block that received a contribution.
template <typename T>
struct Gradients {
  ModelParams<T> values;
  std::vector<std::vector<std::uint32_t>> touched;  // per block, first-touch order
  std::vector<std::vector<std::uint8_t>> touched_mask;

  void clear();
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::shared_ptr<const ModelContext> context, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelContext& context() const noexcept { return *context_; }
  std::shared_ptr<const ModelContext> shared_context() const { return context_; }
  ModelParams<T>& params() noexcept { return params_; }
  const ModelParams<T>& params() const noexcept { return params_; }

  /// ID row (ID-based) or token representation r_i (ID-free).
  std::vector<T> item_base_representation(std::size_t item) const;
  /// Base representation plus projection of the concatenated features.
  std::vector<T> vbpr_item_representation(std::size_t item) const;

  /// Final user and item representations (after VBPR projection or
  /// LightGCN propagation).
  std::pair<Matrix<T>, Matrix<T>> final_representations() const;

  /// Mean BPR loss of the batch plus l2 * mean squared norm of the layer-0
  /// user and item rows involved.
  T loss(std::span<const Triplet> batch, T l2) const;
  /// Same loss; adds its gradient into grads (which must be cleared).
  T loss_and_gradients(std::span<const Triplet> batch, T l2, Gradients<T>& grads) const;

  Gradients<T> make_gradients() const;

 private:
  Matrix<T> base_representations(std::span<const std::uint32_t> items, TcnCache<T>* cache) const;
  void backward_items(std::span<const std::uint32_t> items, const TcnCache<T>& cache,
                      const Matrix<T>& grad, Gradients<T>& grads) const;
  T run(std::span<const Triplet> batch, T l2, Gradients<T>* grads) const;

  ModelConfig config_;
  std::shared_ptr<const ModelContext> context_;
  ModelParams<T> params_;
};

/// LightGCN propagation: layer l+1 of a node is the weighted sum of its
/// neighbours' layer-l embeddings; isolated nodes keep their embedding. The
/// result is the mean over layers 0..L.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> lightgcn_propagate(const Matrix<T>& users, const Matrix<T>& items,
                                                   const Graph& graph, std::size_t layers);

template <typename T>
T score(std::span<const T> user, std::span<const T> item) {
  T s{0};
  for (std::size_t k = 0; k < user.size(); ++k) s += user[k] * item[k];
  return s;
}

/// -ln sigmoid(pos - neg), evaluated as softplus(neg - pos).
double bpr_loss(double pos_score, double neg_score);

}  // namespace motor
