#include "motor/tcn.hpp"

#include <Eigen/Dense>

#include "motor/rng.hpp"

namespace motor {
namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;
template <typename T>
using EVecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using ECVecMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
EMap<T> map(Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <typename T>
ECMap<T> map(const Matrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <typename T>
ECVecMap<T> map(const std::vector<T>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
template <typename T>
EVecMap<T> map(std::vector<T>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

template <typename T>
DenseLayer<T> xavier_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer<T> layer{Matrix<T>(out, in), std::vector<T>(out, T{0})};
  const double a = xavier_bound(in, out);
  for (T& v : layer.weight.values()) v = static_cast<T>(rng.uniform(-a, a));
  return layer;
}

template <typename T>
TcnGroup<T> make_group(GroupKind kind, std::vector<std::size_t> slots, std::size_t dim, Rng& rng) {
  TcnGroup<T> g;
  g.kind = kind;
  g.slots = std::move(slots);
  const std::size_t n = g.slots.size();
  if (kind == GroupKind::cross) {
    g.slot_weights.assign(n, static_cast<T>(1.0 / static_cast<double>(n)));
    g.mlp.push_back(xavier_layer<T>(n * dim, dim, rng));
    g.mlp.push_back(xavier_layer<T>(dim, dim, rng));
  } else if (kind == GroupKind::linear) {
    g.mlp.push_back(xavier_layer<T>(n * dim, dim, rng));
  }
  return g;
}

// Runs the MLP on h0, recording layer inputs and pre-activations.
template <typename T>
EMat<T> mlp_forward(std::span<const DenseLayer<T>> mlp, EMat<T> h,
                    std::vector<Matrix<T>>* activations, std::vector<Matrix<T>>* pre) {
  for (std::size_t l = 0; l < mlp.size(); ++l) {
    const DenseLayer<T>& layer = mlp[l];
    if (static_cast<std::size_t>(h.cols()) != layer.weight.cols()) {
      throw ConfigError("MLP layer " + std::to_string(l) + " expects input width " +
                        std::to_string(layer.weight.cols()) + ", got " + std::to_string(h.cols()));
    }
    EMat<T> z = h * map(layer.weight).transpose();
    z.rowwise() += map(layer.bias);
    if (activations != nullptr) {
      Matrix<T> a(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
      map(a) = h;
      activations->push_back(std::move(a));
      Matrix<T> p(static_cast<std::size_t>(z.rows()), static_cast<std::size_t>(z.cols()));
      map(p) = z;
      pre->push_back(std::move(p));
    }
    if (l + 1 < mlp.size()) z = z.cwiseMax(T{0});
    h = std::move(z);
  }
  return h;
}

template <typename T>
EMat<T> concat_inputs(const std::vector<Matrix<T>>& inputs, const std::vector<std::size_t>& slots) {
  const Eigen::Index rows = static_cast<Eigen::Index>(inputs[slots[0]].rows());
  const Eigen::Index d = static_cast<Eigen::Index>(inputs[slots[0]].cols());
  EMat<T> h0(rows, d * static_cast<Eigen::Index>(slots.size()));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    h0.middleCols(static_cast<Eigen::Index>(k) * d, d) = map(inputs[slots[k]]);
  }
  return h0;
}

}  // namespace

std::string_view to_string(TcnVariant v) {
  switch (v) {
    case TcnVariant::modal_specific: return "modal_specific";
    case TcnVariant::modal_agnostic: return "modal_agnostic";
    case TcnVariant::mean: return "mean";
    case TcnVariant::linear: return "linear";
  }
  return "unknown";
}

TcnVariant tcn_variant_from_string(std::string_view s) {
  if (s == "modal_specific") return TcnVariant::modal_specific;
  if (s == "modal_agnostic") return TcnVariant::modal_agnostic;
  if (s == "mean") return TcnVariant::mean;
  if (s == "linear") return TcnVariant::linear;
  throw ConfigError("unknown tcn_variant '" + std::string(s) + "'");
}

template <typename T>
std::size_t TcnGroup<T>::parameter_count() const {
  std::size_t n = slot_weights.size();
  for (const auto& l : mlp) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
std::size_t TokenCrossNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.parameter_count();
  return n;
}

template <typename T>
TokenCrossNetwork<T> make_tcn(TcnVariant variant, const TokenLayout& layout, std::size_t dim,
                              std::uint64_t seed) {
  TokenCrossNetwork<T> net;
  net.variant = variant;
  net.dim = dim;
  Rng rng(seed);
  const std::size_t total = layout.total_slots();
  auto range = [](std::size_t first, std::size_t count) {
    std::vector<std::size_t> s(count);
    for (std::size_t k = 0; k < count; ++k) s[k] = first + k;
    return s;
  };
  switch (variant) {
    case TcnVariant::modal_specific:
      for (std::size_t m = 0; m < layout.num_modalities(); ++m) {
        net.groups.push_back(make_group<T>(GroupKind::cross, range(layout.first_slot(m), layout.slots[m]), dim, rng));
      }
      break;
    case TcnVariant::modal_agnostic:
      net.groups.push_back(make_group<T>(GroupKind::cross, range(0, total), dim, rng));
      break;
    case TcnVariant::mean:
      net.groups.push_back(make_group<T>(GroupKind::mean, range(0, total), dim, rng));
      break;
    case TcnVariant::linear:
      net.groups.push_back(make_group<T>(GroupKind::linear, range(0, total), dim, rng));
      break;
  }
  return net;
}

template <typename T>
TokenCrossNetwork<T> zeros_like(const TokenCrossNetwork<T>& net) {
  TokenCrossNetwork<T> z = net;
  for (auto& g : z.groups) {
    std::fill(g.slot_weights.begin(), g.slot_weights.end(), T{0});
    for (auto& l : g.mlp) {
      l.weight.fill(T{0});
      std::fill(l.bias.begin(), l.bias.end(), T{0});
    }
  }
  return z;
}

template <typename T>
std::vector<T> one_order(const Matrix<T>& embs, std::span<const T> w) {
  if (w.size() != embs.rows()) throw ConfigError("one_order: weight count != embedding count");
  std::vector<T> out(embs.cols(), T{0});
  for (std::size_t x = 0; x < embs.rows(); ++x)
    for (std::size_t k = 0; k < embs.cols(); ++k) out[k] += w[x] * embs(x, k);
  return out;
}

template <typename T>
std::vector<T> second_order(const Matrix<T>& embs, std::span<const T> w) {
  if (w.size() != embs.rows()) throw ConfigError("second_order: weight count != embedding count");
  const std::size_t d = embs.cols();
  std::vector<T> sum(d, T{0}), sq(d, T{0});
  for (std::size_t x = 0; x < embs.rows(); ++x) {
    for (std::size_t k = 0; k < d; ++k) {
      const T v = w[x] * embs(x, k);
      sum[k] += v;
      sq[k] += v * v;
    }
  }
  std::vector<T> out(d);
  for (std::size_t k = 0; k < d; ++k) out[k] = T{0.5} * (sum[k] * sum[k] - sq[k]);
  return out;
}

template <typename T>
std::vector<T> high_order(const Matrix<T>& embs, std::span<const DenseLayer<T>> mlp) {
  if (mlp.empty()) throw ConfigError("high_order: empty MLP");
  EMat<T> h0 = ECMap<T>(embs.data(), 1, static_cast<Eigen::Index>(embs.size()));
  const EMat<T> out = mlp_forward<T>(mlp, std::move(h0), nullptr, nullptr);
  return std::vector<T>(out.data(), out.data() + out.size());
}

template <typename T>
std::vector<T> token_representation(const TokenCrossNetwork<T>& net, const Matrix<T>& slot_embs) {
  const std::size_t d = net.dim;
  std::vector<T> r(d, T{0});
  for (const TcnGroup<T>& g : net.groups) {
    Matrix<T> embs(g.slots.size(), d);
    for (std::size_t k = 0; k < g.slots.size(); ++k) {
      const auto src = slot_embs.row(g.slots[k]);
      std::copy(src.begin(), src.end(), embs.row(k).begin());
    }
    std::vector<T> part(d, T{0});
    if (g.kind == GroupKind::cross) {
      const auto one = one_order<T>(embs, g.slot_weights);
      const auto two = second_order<T>(embs, g.slot_weights);
      const auto high = high_order<T>(embs, g.mlp);
      for (std::size_t k = 0; k < d; ++k) part[k] = one[k] + two[k] + high[k];
    } else if (g.kind == GroupKind::linear) {
      part = high_order<T>(embs, g.mlp);
    } else {
      const T inv = static_cast<T>(1.0 / static_cast<double>(g.slots.size()));
      for (std::size_t x = 0; x < embs.rows(); ++x)
        for (std::size_t k = 0; k < d; ++k) part[k] += embs(x, k);
      for (T& v : part) v *= inv;
    }
    for (std::size_t k = 0; k < d; ++k) r[k] += part[k];
  }
  return r;
}

template <typename T>
Matrix<T> tcn_forward(const TokenCrossNetwork<T>& net, std::vector<Matrix<T>> inputs,
                      TcnCache<T>& cache) {
  if (inputs.empty()) throw ConfigError("tcn_forward: no inputs");
  const std::size_t batch = inputs[0].rows();
  const std::size_t d = net.dim;
  cache.inputs = std::move(inputs);
  cache.groups.assign(net.groups.size(), {});
  Matrix<T> out(batch, d);
  auto r = map(out);
  for (std::size_t gi = 0; gi < net.groups.size(); ++gi) {
    const TcnGroup<T>& g = net.groups[gi];
    auto& gc = cache.groups[gi];
    EMat<T> part = EMat<T>::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(d));
    if (g.kind == GroupKind::cross) {
      EMat<T> sum = EMat<T>::Zero(part.rows(), part.cols());
      EMat<T> sq = EMat<T>::Zero(part.rows(), part.cols());
      for (std::size_t k = 0; k < g.slots.size(); ++k) {
        const EMat<T> we = g.slot_weights[k] * map(cache.inputs[g.slots[k]]);
        sum += we;
        sq += we.cwiseProduct(we);
      }
      part = sum;
      part += T{0.5} * (sum.cwiseProduct(sum) - sq);
      part += mlp_forward<T>(g.mlp, concat_inputs(cache.inputs, g.slots), &gc.activations,
                             &gc.pre_activations);
      gc.weighted_sum = Matrix<T>(batch, d);
      map(gc.weighted_sum) = sum;
    } else if (g.kind == GroupKind::linear) {
      part = mlp_forward<T>(g.mlp, concat_inputs(cache.inputs, g.slots), &gc.activations,
                            &gc.pre_activations);
    } else {
      for (std::size_t k = 0; k < g.slots.size(); ++k) part += map(cache.inputs[g.slots[k]]);
      part *= static_cast<T>(1.0 / static_cast<double>(g.slots.size()));
    }
    r += part;
  }
  return out;
}

template <typename T>
void tcn_backward(const TokenCrossNetwork<T>& net, const TcnCache<T>& cache,
                  const Matrix<T>& grad_out, TokenCrossNetwork<T>& grads,
                  std::vector<Matrix<T>>& input_grads) {
  const std::size_t batch = grad_out.rows();
  const std::size_t d = net.dim;
  input_grads.assign(cache.inputs.size(), Matrix<T>(batch, d));
  const auto g_out = map(grad_out);
  for (std::size_t gi = 0; gi < net.groups.size(); ++gi) {
    const TcnGroup<T>& g = net.groups[gi];
    TcnGroup<T>& gg = grads.groups[gi];
    const auto& gc = cache.groups[gi];
    const std::size_t n = g.slots.size();

    if (g.kind == GroupKind::mean) {
      const T inv = static_cast<T>(1.0 / static_cast<double>(n));
      for (std::size_t k = 0; k < n; ++k) map(input_grads[g.slots[k]]) += inv * g_out;
      continue;
    }

    if (g.kind == GroupKind::cross) {
      const auto sum = map(gc.weighted_sum);
      for (std::size_t k = 0; k < n; ++k) {
        const auto e = map(cache.inputs[g.slots[k]]);
        const T w = g.slot_weights[k];
        // d(one + second)/d(e_x) = w_x (1 + s - w_x e_x), elementwise.
        const EMat<T> factor = (sum - w * e).array() + T{1};
        gg.slot_weights[k] += g_out.cwiseProduct(e).cwiseProduct(factor).sum();
        map(input_grads[g.slots[k]]) += w * g_out.cwiseProduct(factor);
      }
    }

    EMat<T> delta = g_out;
    for (std::size_t l = g.mlp.size(); l-- > 0;) {
      const DenseLayer<T>& layer = g.mlp[l];
      DenseLayer<T>& dlayer = gg.mlp[l];
      map(dlayer.weight).noalias() += delta.transpose() * map(gc.activations[l]);
      map(dlayer.bias) += delta.colwise().sum();
      EMat<T> prev = delta * map(layer.weight);
      if (l > 0) {
        prev = prev.cwiseProduct(
            (map(gc.pre_activations[l - 1]).array() > T{0}).template cast<T>().matrix());
      }
      delta = std::move(prev);
    }
    for (std::size_t k = 0; k < n; ++k) {
      map(input_grads[g.slots[k]]) +=
          delta.middleCols(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d));
    }
  }
}

#define MOTOR_INSTANTIATE_TCN(T)                                                                  \
  template struct TcnGroup<T>;                                                                    \
  template struct TokenCrossNetwork<T>;                                                           \
  template TokenCrossNetwork<T> make_tcn<T>(TcnVariant, const TokenLayout&, std::size_t,          \
                                            std::uint64_t);                                       \
  template TokenCrossNetwork<T> zeros_like<T>(const TokenCrossNetwork<T>&);                       \
  template std::vector<T> one_order<T>(const Matrix<T>&, std::span<const T>);                     \
  template std::vector<T> second_order<T>(const Matrix<T>&, std::span<const T>);                  \
  template std::vector<T> high_order<T>(const Matrix<T>&, std::span<const DenseLayer<T>>);        \
  template std::vector<T> token_representation<T>(const TokenCrossNetwork<T>&, const Matrix<T>&); \
  template Matrix<T> tcn_forward<T>(const TokenCrossNetwork<T>&, std::vector<Matrix<T>>,          \
                                    TcnCache<T>&);                                                \
  template void tcn_backward<T>(const TokenCrossNetwork<T>&, const TcnCache<T>&,                  \
                                const Matrix<T>&, TokenCrossNetwork<T>&, std::vector<Matrix<T>>&);

MOTOR_INSTANTIATE_TCN(float)
MOTOR_INSTANTIATE_TCN(double)

}  // namespace motor
