#include "motor/token_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "motor/rng.hpp"

namespace motor {

std::size_t TokenLayout::total_slots() const {
  return std::accumulate(slots.begin(), slots.end(), std::size_t{0});
}

std::size_t TokenLayout::first_slot(std::size_t m) const {
  return std::accumulate(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(m), std::size_t{0});
}

TokenLayout canonical_layout(std::vector<TokenAssignment>& assignments) {
  std::stable_sort(assignments.begin(), assignments.end(),
                   [](const TokenAssignment& a, const TokenAssignment& b) { return a.modality < b.modality; });
  TokenLayout layout;
  for (std::size_t m = 0; m < assignments.size(); ++m) {
    const auto& ta = assignments[m];
    if (m > 0) {
      if (ta.modality == assignments[m - 1].modality) throw ConfigError("duplicate modality in token assignments");
      if (ta.num_items() != assignments[0].num_items()) throw ShapeError("token files disagree on item count");
      if (ta.codebook_size != assignments[0].codebook_size) throw ShapeError("token files disagree on K");
    }
    layout.modalities.push_back(ta.modality);
    layout.slots.push_back(ta.num_slots());
    layout.codebook_size = ta.codebook_size;
  }
  return layout;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
std::size_t TokenEmbeddingTables<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tables) n += t.size();
  return n;
}

template <typename T>
TokenEmbeddingTables<T> init_tables(const TokenLayout& layout, std::size_t dim, std::uint64_t seed) {
  if (dim == 0 || layout.codebook_size == 0 || layout.total_slots() == 0) {
    throw ConfigError("token tables need K >= 1, d >= 1 and at least one slot");
  }
  TokenEmbeddingTables<T> out;
  out.layout = layout;
  out.dim = dim;
  const double a = xavier_bound(layout.codebook_size, dim);
  Rng rng(seed);
  for (std::size_t s = 0; s < layout.total_slots(); ++s) {
    Matrix<T> table(layout.codebook_size, dim);
    for (T& v : table.values()) v = static_cast<T>(rng.uniform(-a, a));
    out.tables.push_back(std::move(table));
  }
  return out;
}

template <typename T>
TokenEmbeddingTables<T> init_tables(std::size_t num_modalities, std::size_t num_slots,
                                    std::size_t codebook_size, std::size_t dim, std::uint64_t seed) {
  if (num_modalities == 0 || num_modalities > 2) throw ConfigError("one or two modalities supported");
  TokenLayout layout;
  for (std::size_t m = 0; m < num_modalities; ++m) {
    layout.modalities.push_back(static_cast<Modality>(m));
    layout.slots.push_back(num_slots);
  }
  layout.codebook_size = codebook_size;
  return init_tables<T>(layout, dim, seed);
}

std::uint32_t token_at(std::span<const TokenAssignment> assignments, const TokenLayout& layout,
                       std::size_t item, std::size_t slot) {
  std::size_t m = 0;
  std::size_t local = slot;
  while (local >= layout.slots[m]) {
    local -= layout.slots[m];
    ++m;
  }
  const std::uint32_t t = assignments[m].tokens(item, local);
  if (t >= layout.codebook_size) {
    throw DataError("corrupt token assignment: item " + std::to_string(item) + " slot " +
                    std::to_string(slot) + " has token " + std::to_string(t));
  }
  return t;
}

template <typename T>
std::vector<std::span<const T>> lookup(const TokenEmbeddingTables<T>& tables,
                                       std::span<const TokenAssignment> assignments,
                                       std::size_t item) {
  const TokenLayout& layout = tables.layout;
  if (assignments.size() != layout.num_modalities()) throw ShapeError("assignment count != modality count");
  if (item >= assignments[0].num_items()) throw ShapeError("item index out of range");
  std::vector<std::span<const T>> out;
  out.reserve(layout.total_slots());
  for (std::size_t s = 0; s < layout.total_slots(); ++s) {
    out.push_back(tables.tables[s].row(token_at(assignments, layout, item, s)));
  }
  return out;
}

template struct TokenEmbeddingTables<float>;
template struct TokenEmbeddingTables<double>;
template TokenEmbeddingTables<float> init_tables<float>(const TokenLayout&, std::size_t, std::uint64_t);
template TokenEmbeddingTables<double> init_tables<double>(const TokenLayout&, std::size_t, std::uint64_t);
template TokenEmbeddingTables<float> init_tables<float>(std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t);
template TokenEmbeddingTables<double> init_tables<double>(std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t);
template std::vector<std::span<const float>> lookup(const TokenEmbeddingTables<float>&,
                                                    std::span<const TokenAssignment>, std::size_t);
template std::vector<std::span<const double>> lookup(const TokenEmbeddingTables<double>&,
                                                     std::span<const TokenAssignment>, std::size_t);

}  // namespace motor
