#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "motor/matrix.hpp"
#include "motor/token_store.hpp"

namespace motor {

/// How token embeddings are combined into an item representation.
///   modal_specific: one crossing group per modality, outputs summed.
///   modal_agnostic: a single crossing group over every token slot.
///   mean / linear:  ablation replacements for the crossing network.
enum class TcnVariant : std::uint8_t { modal_specific = 0, modal_agnostic = 1, mean = 2, linear = 3 };

std::string_view to_string(TcnVariant v);
TcnVariant tcn_variant_from_string(std::string_view s);

enum class GroupKind : std::uint8_t { cross = 0, mean = 1, linear = 2 };

/// y = W x + b with W stored out x in.
template <typename T>
struct DenseLayer {
  Matrix<T> weight;
  std::vector<T> bias;
};

/// A set of token slots combined together. A cross group sums the weighted
/// one-order term, the pairwise element-wise second-order term and an MLP
/// over the concatenated embeddings (rectifier on every layer but the last).
template <typename T>
struct TcnGroup {
  GroupKind kind = GroupKind::cross;
  std::vector<std::size_t> slots;  // canonical slot indices
  std::vector<T> slot_weights;     // cross groups only
  std::vector<DenseLayer<T>> mlp;  // cross: hidden + output; linear: one layer

  std::size_t parameter_count() const;
};

template <typename T>
struct TokenCrossNetwork {
  TcnVariant variant = TcnVariant::modal_specific;
  std::size_t dim = 0;
  std::vector<TcnGroup<T>> groups;

  std::size_t parameter_count() const;
};

/// Builds the groups for a variant. Slot weights start at 1/n for a group
/// of n slots; MLP weights are Xavier-uniform and biases zero.
template <typename T>
TokenCrossNetwork<T> make_tcn(TcnVariant variant, const TokenLayout& layout, std::size_t dim,
                              std::uint64_t seed);

/// Same structure, every parameter zero (gradient accumulator).
template <typename T>
TokenCrossNetwork<T> zeros_like(const TokenCrossNetwork<T>& net);

// Single-item building blocks. `embs` holds one embedding per row.

/// sum_x w_x e_x
template <typename T>
std::vector<T> one_order(const Matrix<T>& embs, std::span<const T> w);

/// sum_{x<y} w_x w_y (e_x * e_y), evaluated as
/// 0.5 * [(sum w_x e_x)^2 - sum (w_x e_x)^2].
template <typename T>
std::vector<T> second_order(const Matrix<T>& embs, std::span<const T> w);

/// MLP over the row-concatenation of embs. Throws ConfigError when the
/// first layer's input width does not match.
template <typename T>
std::vector<T> high_order(const Matrix<T>& embs, std::span<const DenseLayer<T>> mlp);

/// Item representation from its embeddings in canonical slot order.
template <typename T>
std::vector<T> token_representation(const TokenCrossNetwork<T>& net, const Matrix<T>& slot_embs);

/// Forward state kept for the backward pass of a batch.
template <typename T>
struct TcnCache {
  std::vector<Matrix<T>> inputs;  // per canonical slot: B x d
  struct Group {
    Matrix<T> weighted_sum;                // B x d, cross only
    std::vector<Matrix<T>> activations;    // h_0 .. h_{L-1} inputs of each layer
    std::vector<Matrix<T>> pre_activations;
  };
  std::vector<Group> groups;
};

/// Batched forward: inputs[s] is the B x d block of slot-s embeddings.
template <typename T>
Matrix<T> tcn_forward(const TokenCrossNetwork<T>& net, std::vector<Matrix<T>> inputs,
                      TcnCache<T>& cache);

/// Accumulates parameter gradients into `grads` and writes input gradients
/// (one B x d block per canonical slot) into `input_grads`.
template <typename T>
void tcn_backward(const TokenCrossNetwork<T>& net, const TcnCache<T>& cache,
                  const Matrix<T>& grad_out, TokenCrossNetwork<T>& grads,
                  std::vector<Matrix<T>>& input_grads);

}  // namespace motor
