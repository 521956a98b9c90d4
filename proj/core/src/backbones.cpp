#include "motor/backbones.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "motor/parallel.hpp"
#include "motor/rng.hpp"

namespace motor {
namespace {

enum Stream : std::uint64_t { kUserStream = 1, kItemStream, kTokenStream, kTcnStream, kVbprStream };

template <typename T>
Matrix<T> xavier_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix<T> m(rows, cols);
  const double a = xavier_bound(rows, cols);
  Rng rng(seed);
  for (T& v : m.values()) v = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <typename T>
void touch(Gradients<T>& g, std::size_t block, std::uint32_t row) {
  auto& mask = g.touched_mask[block];
  if (!mask[row]) {
    mask[row] = 1;
    g.touched[block].push_back(row);
  }
}

template <typename T>
bool all_zero(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return x == T{0}; });
}

// Block ordinals inside ModelParams::blocks().
template <typename T>
std::size_t item_block(const ModelParams<T>&) {
  return 1;
}
template <typename T>
std::size_t first_token_block(const ModelParams<T>& p) {
  return p.item_embeddings.empty() ? 1 : 2;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view to_string(Backbone b) {
  switch (b) {
    case Backbone::bpr_mf: return "bpr_mf";
    case Backbone::lightgcn: return "lightgcn";
    case Backbone::vbpr: return "vbpr";
  }
  return "unknown";
}

std::string_view to_string(ItemMode m) { return m == ItemMode::id_based ? "id_based" : "id_free"; }

Backbone backbone_from_string(std::string_view s) {
  if (s == "bpr_mf" || s == "bpr") return Backbone::bpr_mf;
  if (s == "lightgcn") return Backbone::lightgcn;
  if (s == "vbpr") return Backbone::vbpr;
  throw ConfigError("unknown backbone '" + std::string(s) + "'");
}

ItemMode item_mode_from_string(std::string_view s) {
  if (s == "id_based") return ItemMode::id_based;
  if (s == "id_free") return ItemMode::id_free;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

double bpr_loss(double pos_score, double neg_score) { return softplus(neg_score - pos_score); }

Graph build_graph(std::size_t num_users, std::size_t num_items, std::span<const Edge> edges) {
  std::vector<Edge> sorted(edges.begin(), edges.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  Graph g;
  g.num_users = num_users;
  g.num_items = num_items;
  std::vector<std::size_t> du(num_users, 0), di(num_items, 0);
  for (const Edge& e : sorted) {
    ++du[e.user];
    ++di[e.item];
  }
  g.user_offsets.assign(num_users + 1, 0);
  g.item_offsets.assign(num_items + 1, 0);
  for (std::size_t u = 0; u < num_users; ++u) g.user_offsets[u + 1] = g.user_offsets[u] + du[u];
  for (std::size_t i = 0; i < num_items; ++i) g.item_offsets[i + 1] = g.item_offsets[i] + di[i];
  g.user_neighbors.resize(sorted.size());
  g.item_neighbors.resize(sorted.size());
  g.user_weights.resize(sorted.size());
  g.item_weights.resize(sorted.size());
  std::vector<std::size_t> ucur(g.user_offsets.begin(), g.user_offsets.end() - 1);
  std::vector<std::size_t> icur(g.item_offsets.begin(), g.item_offsets.end() - 1);
  // Edges sorted by (user, item): user lists come out sorted by item and
  // item lists sorted by user.
  for (const Edge& e : sorted) {
    const double w = 1.0 / std::sqrt(static_cast<double>(du[e.user]) * static_cast<double>(di[e.item]));
    g.user_neighbors[ucur[e.user]] = e.item;
    g.user_weights[ucur[e.user]++] = w;
    g.item_neighbors[icur[e.item]] = e.user;
    g.item_weights[icur[e.item]++] = w;
  }
  return g;
}

Graph build_graph(const InteractionDataset& dataset) {
  return build_graph(dataset.num_users, dataset.num_items, dataset.train_edges);
}

std::shared_ptr<const ModelContext> make_context(const InteractionDataset& dataset,
                                                 std::vector<TokenAssignment> tokens,
                                                 std::span<const FeatureMatrix> features) {
  auto ctx = std::make_shared<ModelContext>();
  ctx->num_users = dataset.num_users;
  ctx->num_items = dataset.num_items;
  for (const auto& ta : tokens) {
    if (ta.num_items() != dataset.num_items) {
      throw ShapeError("token file has " + std::to_string(ta.num_items()) + " items, dataset has " +
                       std::to_string(dataset.num_items));
    }
  }
  ctx->layout = canonical_layout(tokens);
  ctx->tokens = std::move(tokens);
  if (!features.empty()) {
    std::vector<const FeatureMatrix*> ordered;
    for (const auto& f : features) ordered.push_back(&f);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const FeatureMatrix* a, const FeatureMatrix* b) { return a->modality < b->modality; });
    std::size_t width = 0;
    for (const auto* f : ordered) {
      if (f->rows() != dataset.num_items) throw ShapeError("feature rows != dataset items");
      width += f->dim();
    }
    ctx->item_features = Matrix<float>(dataset.num_items, width);
    for (std::size_t i = 0; i < dataset.num_items; ++i) {
      auto dst = ctx->item_features.row(i).begin();
      for (const auto* f : ordered) dst = std::copy(f->data.row(i).begin(), f->data.row(i).end(), dst);
    }
  }
  ctx->graph = build_graph(dataset);
  return ctx;
}

template <typename T>
std::vector<ParamView<T>> ModelParams<T>::blocks() {
  std::vector<ParamView<T>> out;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool sparse, std::span<T> v) {
    out.push_back({std::move(name), rows, cols, sparse, v});
  };
  add("user_embeddings", user_embeddings.rows(), user_embeddings.cols(), true, user_embeddings.values());
  if (!item_embeddings.empty()) {
    add("item_embeddings", item_embeddings.rows(), item_embeddings.cols(), true, item_embeddings.values());
  }
  for (std::size_t s = 0; s < token_tables.tables.size(); ++s) {
    auto& t = token_tables.tables[s];
    add("token_table." + std::to_string(s), t.rows(), t.cols(), true, t.values());
  }
  for (std::size_t gi = 0; gi < tcn.groups.size(); ++gi) {
    auto& g = tcn.groups[gi];
    const std::string prefix = "tcn." + std::to_string(gi) + ".";
    if (!g.slot_weights.empty()) add(prefix + "slot_weights", 1, g.slot_weights.size(), false, g.slot_weights);
    for (std::size_t l = 0; l < g.mlp.size(); ++l) {
      auto& layer = g.mlp[l];
      add(prefix + "weight." + std::to_string(l), layer.weight.rows(), layer.weight.cols(), false,
          layer.weight.values());
      add(prefix + "bias." + std::to_string(l), 1, layer.bias.size(), false, layer.bias);
    }
  }
  if (!vbpr_projection.empty()) {
    add("vbpr_projection", vbpr_projection.rows(), vbpr_projection.cols(), false, vbpr_projection.values());
  }
  return out;
}

template <typename T>
std::vector<ParamView<const T>> ModelParams<T>::blocks() const {
  auto mutable_blocks = const_cast<ModelParams<T>*>(this)->blocks();
  std::vector<ParamView<const T>> out;
  out.reserve(mutable_blocks.size());
  for (auto& b : mutable_blocks) out.push_back({std::move(b.name), b.rows, b.cols, b.sparse, b.values});
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.values.size();
  return n;
}

template <typename T>
void Gradients<T>::clear() {
  auto blocks = values.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& view = blocks[b];
    if (view.sparse) {
      for (std::uint32_t r : touched[b]) {
        std::fill_n(view.values.begin() + static_cast<std::ptrdiff_t>(r * view.cols), view.cols, T{0});
        touched_mask[b][r] = 0;
      }
      touched[b].clear();
    } else {
      std::fill(view.values.begin(), view.values.end(), T{0});
    }
  }
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::shared_ptr<const ModelContext> context,
                std::uint64_t seed)
    : config_(config), context_(std::move(context)) {
  if (config_.dim == 0) throw ConfigError("embedding dimension must be positive");
  const ModelContext& ctx = *context_;
  params_.user_embeddings = xavier_matrix<T>(ctx.num_users, config_.dim, derive_seed(seed, kUserStream));
  if (config_.mode == ItemMode::id_based) {
    params_.item_embeddings = xavier_matrix<T>(ctx.num_items, config_.dim, derive_seed(seed, kItemStream));
  } else {
    if (ctx.tokens.empty()) throw ConfigError("ID-free mode requires token assignments");
    params_.token_tables = init_tables<T>(ctx.layout, config_.dim, derive_seed(seed, kTokenStream));
    params_.tcn = make_tcn<T>(config_.tcn_variant, ctx.layout, config_.dim, derive_seed(seed, kTcnStream));
  }
  if (config_.backbone == Backbone::vbpr) {
    if (ctx.item_features.empty()) throw ConfigError("VBPR requires item features");
    params_.vbpr_projection =
        xavier_matrix<T>(ctx.item_features.cols(), config_.dim, derive_seed(seed, kVbprStream));
  }
}

template <typename T>
Gradients<T> Model<T>::make_gradients() const {
  Gradients<T> g;
  g.values = params_;
  for (auto& b : g.values.blocks()) std::fill(b.values.begin(), b.values.end(), T{0});
  for (const auto& b : g.values.blocks()) {
    g.touched.emplace_back();
    g.touched_mask.emplace_back(b.sparse ? b.rows : 0, std::uint8_t{0});
  }
  return g;
}

template <typename T>
Matrix<T> Model<T>::base_representations(std::span<const std::uint32_t> items,
                                         TcnCache<T>* cache) const {
  const std::size_t d = config_.dim;
  if (config_.mode == ItemMode::id_based) {
    Matrix<T> out(items.size(), d);
    for (std::size_t b = 0; b < items.size(); ++b) {
      const auto src = params_.item_embeddings.row(items[b]);
      std::copy(src.begin(), src.end(), out.row(b).begin());
    }
    return out;
  }
  const ModelContext& ctx = *context_;
  const std::size_t slots = ctx.layout.total_slots();
  std::vector<Matrix<T>> inputs(slots, Matrix<T>(items.size(), d));
  for (std::size_t b = 0; b < items.size(); ++b) {
    for (std::size_t s = 0; s < slots; ++s) {
      const auto src = params_.token_tables.tables[s].row(token_at(ctx.tokens, ctx.layout, items[b], s));
      std::copy(src.begin(), src.end(), inputs[s].row(b).begin());
    }
  }
  TcnCache<T> local;
  return tcn_forward(params_.tcn, std::move(inputs), cache != nullptr ? *cache : local);
}

template <typename T>
void Model<T>::backward_items(std::span<const std::uint32_t> items, const TcnCache<T>& cache,
                              const Matrix<T>& grad, Gradients<T>& grads) const {
  const std::size_t d = config_.dim;
  if (config_.mode == ItemMode::id_based) {
    const std::size_t block = item_block(params_);
    for (std::size_t b = 0; b < items.size(); ++b) {
      const auto g = grad.row(b);
      if (all_zero<T>(g)) continue;
      auto dst = grads.values.item_embeddings.row(items[b]);
      for (std::size_t k = 0; k < d; ++k) dst[k] += g[k];
      touch(grads, block, items[b]);
    }
    return;
  }
  const ModelContext& ctx = *context_;
  std::vector<Matrix<T>> input_grads;
  tcn_backward(params_.tcn, cache, grad, grads.values.tcn, input_grads);
  const std::size_t first = first_token_block(params_);
  for (std::size_t b = 0; b < items.size(); ++b) {
    if (all_zero<T>(grad.row(b))) continue;
    for (std::size_t s = 0; s < input_grads.size(); ++s) {
      const std::uint32_t tok = token_at(ctx.tokens, ctx.layout, items[b], s);
      auto dst = grads.values.token_tables.tables[s].row(tok);
      const auto g = input_grads[s].row(b);
      for (std::size_t k = 0; k < d; ++k) dst[k] += g[k];
      touch(grads, first + s, tok);
    }
  }
}

template <typename T>
std::vector<T> Model<T>::item_base_representation(std::size_t item) const {
  const std::uint32_t idx = static_cast<std::uint32_t>(item);
  const Matrix<T> r = base_representations(std::span<const std::uint32_t>(&idx, 1), nullptr);
  return {r.row(0).begin(), r.row(0).end()};
}

template <typename T>
std::vector<T> Model<T>::vbpr_item_representation(std::size_t item) const {
  std::vector<T> r = item_base_representation(item);
  if (params_.vbpr_projection.empty()) return r;
  const auto f = context_->item_features.row(item);
  const Matrix<T>& p = params_.vbpr_projection;
  for (std::size_t j = 0; j < p.rows(); ++j) {
    const T fj = static_cast<T>(f[j]);
    for (std::size_t k = 0; k < p.cols(); ++k) r[k] += fj * p(j, k);
  }
  return r;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> Model<T>::final_representations() const {
  const std::size_t n = context_->num_items;
  const std::size_t d = config_.dim;
  constexpr std::size_t kChunk = 1024;
  Matrix<T> items(n, d);
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(0, chunks, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(n, lo + kChunk);
    std::vector<std::uint32_t> ids(hi - lo);
    std::iota(ids.begin(), ids.end(), static_cast<std::uint32_t>(lo));
    const Matrix<T> base = base_representations(ids, nullptr);
    std::copy(base.values().begin(), base.values().end(), items.values().begin() + static_cast<std::ptrdiff_t>(lo * d));
  });
  if (config_.backbone == Backbone::vbpr) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto f = context_->item_features.row(i);
      auto r = items.row(i);
      for (std::size_t j = 0; j < params_.vbpr_projection.rows(); ++j) {
        const T fj = static_cast<T>(f[j]);
        const auto prow = params_.vbpr_projection.row(j);
        for (std::size_t k = 0; k < d; ++k) r[k] += fj * prow[k];
      }
    }
  }
  if (config_.backbone == Backbone::lightgcn) {
    return lightgcn_propagate(params_.user_embeddings, items, context_->graph, config_.layers);
  }
  return {params_.user_embeddings, std::move(items)};
}

template <typename T>
T Model<T>::run(std::span<const Triplet> batch, T l2, Gradients<T>* grads) const {
  if (batch.empty()) return T{0};
  const std::size_t d = config_.dim;
  const ModelContext& ctx = *context_;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;

  // Items whose base representation is needed, with row lookup.
  std::vector<std::uint32_t> items;
  const bool graph = config_.backbone == Backbone::lightgcn;
  if (graph) {
    items.resize(ctx.num_items);
    std::iota(items.begin(), items.end(), 0u);
  } else {
    for (const Triplet& t : batch) {
      items.push_back(t.pos);
      items.push_back(t.neg);
    }
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  auto row_of = [&](std::uint32_t item) -> std::size_t {
    if (graph) return item;
    return static_cast<std::size_t>(std::lower_bound(items.begin(), items.end(), item) - items.begin());
  };

  TcnCache<T> cache;
  const Matrix<T> base = base_representations(items, &cache);
  Matrix<T> item_reps = base;
  Matrix<T> graph_users;
  if (config_.backbone == Backbone::vbpr) {
    for (std::size_t b = 0; b < items.size(); ++b) {
      const auto f = ctx.item_features.row(items[b]);
      auto r = item_reps.row(b);
      for (std::size_t j = 0; j < params_.vbpr_projection.rows(); ++j) {
        const T fj = static_cast<T>(f[j]);
        const auto prow = params_.vbpr_projection.row(j);
        for (std::size_t k = 0; k < d; ++k) r[k] += fj * prow[k];
      }
    }
  } else if (graph) {
    auto [hu, hi] = lightgcn_propagate(params_.user_embeddings, base, ctx.graph, config_.layers);
    graph_users = std::move(hu);
    item_reps = std::move(hi);
  }
  const Matrix<T>& user_reps = graph ? graph_users : params_.user_embeddings;

  Matrix<T> d_users, d_items;
  if (grads != nullptr) {
    d_users = Matrix<T>(graph ? ctx.num_users : 0, d);
    d_items = Matrix<T>(items.size(), d);
  }
  std::vector<T> diff(d);
  for (const Triplet& t : batch) {
    const auto hu = user_reps.row(t.user);
    const auto hp = item_reps.row(row_of(t.pos));
    const auto hn = item_reps.row(row_of(t.neg));
    for (std::size_t k = 0; k < d; ++k) diff[k] = hp[k] - hn[k];
    const double x = static_cast<double>(score<T>(hu, diff));
    total += softplus(-x);
    if (grads == nullptr) continue;
    const T gx = static_cast<T>(-sigmoid(-x) * inv_b);
    std::span<T> du = graph ? d_users.row(t.user) : grads->values.user_embeddings.row(t.user);
    auto dp = d_items.row(row_of(t.pos));
    auto dn = d_items.row(row_of(t.neg));
    for (std::size_t k = 0; k < d; ++k) {
      du[k] += gx * diff[k];
      dp[k] += gx * hu[k];
      dn[k] -= gx * hu[k];
    }
    if (!graph) touch(*grads, 0, t.user);
  }

  // Layer-0 squared-norm penalty on the user and item rows of the batch.
  Matrix<T> d_base;
  if (grads != nullptr) d_base = Matrix<T>(items.size(), d);
  if (l2 != T{0}) {
    const T coef = static_cast<T>(2.0 * static_cast<double>(l2) * inv_b);
    auto penalize = [&](std::span<const T> row, std::span<T> grad_row) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        sq += static_cast<double>(row[k]) * static_cast<double>(row[k]);
        if (!grad_row.empty()) grad_row[k] += coef * row[k];
      }
      total += static_cast<double>(l2) * sq;
    };
    for (const Triplet& t : batch) {
      std::span<T> gu, gp, gn;
      if (grads != nullptr) {
        gu = graph ? std::span<T>() : grads->values.user_embeddings.row(t.user);
        gp = d_base.row(row_of(t.pos));
        gn = d_base.row(row_of(t.neg));
      }
      penalize(params_.user_embeddings.row(t.user), gu);
      penalize(base.row(row_of(t.pos)), gp);
      penalize(base.row(row_of(t.neg)), gn);
    }
  }

  if (grads != nullptr) {
    if (config_.backbone == Backbone::vbpr) {
      Matrix<T>& dproj = grads->values.vbpr_projection;
      for (std::size_t b = 0; b < items.size(); ++b) {
        const auto f = ctx.item_features.row(items[b]);
        const auto g = d_items.row(b);
        for (std::size_t j = 0; j < dproj.rows(); ++j) {
          const T fj = static_cast<T>(f[j]);
          auto drow = dproj.row(j);
          for (std::size_t k = 0; k < d; ++k) drow[k] += fj * g[k];
        }
      }
    }
    if (graph) {
      auto [gu0, gi0] = lightgcn_propagate(d_users, d_items, ctx.graph, config_.layers);
      d_items = std::move(gi0);
      // Graph-mode user penalty applies to layer 0, after propagation.
      if (l2 != T{0}) {
        const T coef = static_cast<T>(2.0 * static_cast<double>(l2) * inv_b);
        for (const Triplet& t : batch) {
          auto g = gu0.row(t.user);
          const auto e = params_.user_embeddings.row(t.user);
          for (std::size_t k = 0; k < d; ++k) g[k] += coef * e[k];
        }
      }
      for (std::uint32_t u = 0; u < ctx.num_users; ++u) {
        const auto g = gu0.row(u);
        if (all_zero<T>(g)) continue;
        auto dst = grads->values.user_embeddings.row(u);
        for (std::size_t k = 0; k < d; ++k) dst[k] += g[k];
        touch(*grads, 0, u);
      }
    }
    auto& db = d_base.storage();
    const auto& di = d_items.storage();
    for (std::size_t k = 0; k < db.size(); ++k) db[k] += di[k];
    backward_items(items, cache, d_base, *grads);
  }
  return static_cast<T>(total * inv_b);
}

template <typename T>
T Model<T>::loss(std::span<const Triplet> batch, T l2) const {
  return run(batch, l2, nullptr);
}

template <typename T>
T Model<T>::loss_and_gradients(std::span<const Triplet> batch, T l2, Gradients<T>& grads) const {
  return run(batch, l2, &grads);
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> lightgcn_propagate(const Matrix<T>& users, const Matrix<T>& items,
                                                   const Graph& graph, std::size_t layers) {
  const std::size_t d = users.cols();
  if (users.rows() != graph.num_users || items.rows() != graph.num_items || items.cols() != d) {
    throw ShapeError("lightgcn_propagate: embedding shapes do not match the graph");
  }
  Matrix<T> acc_u = users, acc_i = items;
  if (layers == 0) return {std::move(acc_u), std::move(acc_i)};
  Matrix<T> cur_u = users, cur_i = items;
  Matrix<T> next_u(users.rows(), d), next_i(items.rows(), d);
  auto step = [d](const std::vector<std::size_t>& offsets, const std::vector<std::uint32_t>& nbrs,
                  const std::vector<double>& weights, const Matrix<T>& self, const Matrix<T>& other,
                  Matrix<T>& next) {
    parallel_for(0, self.rows(), [&](std::size_t v) {
      auto out = next.row(v);
      const std::size_t lo = offsets[v], hi = offsets[v + 1];
      if (lo == hi) {
        const auto keep = self.row(v);
        std::copy(keep.begin(), keep.end(), out.begin());
        return;
      }
      std::fill(out.begin(), out.end(), T{0});
      for (std::size_t e = lo; e < hi; ++e) {
        const T w = static_cast<T>(weights[e]);
        const auto src = other.row(nbrs[e]);
        for (std::size_t k = 0; k < d; ++k) out[k] += w * src[k];
      }
    });
  };
  for (std::size_t l = 0; l < layers; ++l) {
    step(graph.user_offsets, graph.user_neighbors, graph.user_weights, cur_u, cur_i, next_u);
    step(graph.item_offsets, graph.item_neighbors, graph.item_weights, cur_i, cur_u, next_i);
    std::swap(cur_u, next_u);
    std::swap(cur_i, next_i);
    for (std::size_t k = 0; k < acc_u.size(); ++k) acc_u.data()[k] += cur_u.data()[k];
    for (std::size_t k = 0; k < acc_i.size(); ++k) acc_i.data()[k] += cur_i.data()[k];
  }
  const T inv = static_cast<T>(1.0 / static_cast<double>(layers + 1));
  for (T& v : acc_u.values()) v *= inv;
  for (T& v : acc_i.values()) v *= inv;
  return {std::move(acc_u), std::move(acc_i)};
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template class Model<float>;
template class Model<double>;
template std::pair<Matrix<float>, Matrix<float>> lightgcn_propagate(const Matrix<float>&, const Matrix<float>&,
                                                                    const Graph&, std::size_t);
template std::pair<Matrix<double>, Matrix<double>> lightgcn_propagate(const Matrix<double>&,
                                                                      const Matrix<double>&, const Graph&,
                                                                      std::size_t);

}  // namespace motor
