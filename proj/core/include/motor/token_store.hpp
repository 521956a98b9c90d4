#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "motor/common.hpp"
#include "motor/matrix.hpp"
#include "motor/quantizer.hpp"

namespace motor {

/// Modalities in canonical order with their slot counts. Token slots are
/// numbered canonically: all slots of the first modality, then the next.
struct TokenLayout {
  std::vector<Modality> modalities;
  std::vector<std::size_t> slots;  // D per modality
  std::size_t codebook_size = 0;   // K

  std::size_t num_modalities() const noexcept { return modalities.size(); }
  std::size_t total_slots() const;
  /// Canonical index of the first slot of modality position m.
  std::size_t first_slot(std::size_t m) const;
  friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

/// Sorts assignments into canonical modality order (vision, text) and
/// derives the layout. All assignments must share N and K.
TokenLayout canonical_layout(std::vector<TokenAssignment>& assignments);

/// One K x d table per canonical token slot.
template <typename T>
struct TokenEmbeddingTables {
  TokenLayout layout;
  std::size_t dim = 0;
  std::vector<Matrix<T>> tables;

  std::size_t parameter_count() const;
};

/// Xavier-uniform tables: entries i.i.d. in [-a, a], a = sqrt(6 / (K + d)).
/// Tables are filled in canonical order from a single stream.
template <typename T>
TokenEmbeddingTables<T> init_tables(const TokenLayout& layout, std::size_t dim, std::uint64_t seed);

/// Uniform convenience overload: num_modalities modalities with D slots.
template <typename T>
TokenEmbeddingTables<T> init_tables(std::size_t num_modalities, std::size_t num_slots,
                                    std::size_t codebook_size, std::size_t dim, std::uint64_t seed);

double xavier_bound(std::size_t fan_in, std::size_t fan_out);

/// Token id of item i at canonical slot s. Throws DataError if the stored
/// id falls outside [0, K).
std::uint32_t token_at(std::span<const TokenAssignment> assignments, const TokenLayout& layout,
                       std::size_t item, std::size_t slot);

/// Table rows for every canonical slot of the item (views into tables).
template <typename T>
std::vector<std::span<const T>> lookup(const TokenEmbeddingTables<T>& tables,
                                       std::span<const TokenAssignment> assignments,
                                       std::size_t item);

}  // namespace motor
