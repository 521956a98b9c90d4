#include "motor/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include "json.hpp"
#include <sstream>

#include "motor/eval_report.hpp"

namespace motor {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (l2_coeff < 0.0) throw ConfigError("l2_coeff must be non-negative");
}

template <typename T>
AdamState<T> make_adam_state(const ModelParams<T>& params) {
  AdamState<T> s;
  for (const auto& b : params.blocks()) {
    s.first_moment.emplace_back(b.values.size(), T{0});
    s.second_moment.emplace_back(b.values.size(), T{0});
  }
  return s;
}

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& config) {
  ++state.step;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const T lr = static_cast<T>(config.learning_rate);
  const T eps = static_cast<T>(config.adam_eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);

  auto pblocks = params.blocks();
  const auto gblocks = grads.values.blocks();
  auto update = [&](std::size_t b, std::size_t lo, std::size_t hi) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    auto p = pblocks[b].values;
    const auto g = gblocks[b].values;
    for (std::size_t k = lo; k < hi; ++k) {
      m[k] = tb1 * m[k] + (T{1} - tb1) * g[k];
      v[k] = tb2 * v[k] + (T{1} - tb2) * g[k] * g[k];
      const T mhat = m[k] * inv_c1;
      const T vhat = v[k] * inv_c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (std::size_t b = 0; b < pblocks.size(); ++b) {
    if (pblocks[b].sparse) {
      const std::size_t cols = pblocks[b].cols;
      for (std::uint32_t r : grads.touched[b]) update(b, r * cols, (r + 1) * cols);
    } else {
      update(b, 0, pblocks[b].values.size());
    }
  }
}

std::vector<Triplet> sample_triplets(const InteractionDataset& dataset, std::size_t batch_size,
                                     Rng& rng) {
  if (dataset.train_edges.empty()) throw DataError("cannot sample triplets: empty train split");
  constexpr int kMaxRejections = 200;
  std::vector<Triplet> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Edge& e = dataset.train_edges[rng.uniform_index(dataset.train_edges.size())];
    const auto& positives = dataset.user_adjacency[e.user];
    std::uint32_t neg = 0;
    bool found = false;
    for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
      neg = static_cast<std::uint32_t>(rng.uniform_index(dataset.num_items));
      if (!std::binary_search(positives.begin(), positives.end(), neg)) {
        found = true;
        break;
      }
    }
    if (!found) {
      const std::size_t free = dataset.num_items - positives.size();
      if (free == 0) {
        throw DataError("cannot sample a negative for user " + dataset.user_ids[e.user] +
                        ": the user interacted with every item");
      }
      // The k-th item not in the sorted positive list.
      std::uint64_t k = rng.uniform_index(free);
      std::uint32_t candidate = 0;
      for (std::uint32_t p : positives) {
        if (candidate + k < p) break;
        k -= (p - candidate);
        candidate = p + 1;
      }
      neg = static_cast<std::uint32_t>(candidate + k);
    }
    out.push_back({e.user, e.item, neg});
  }
  return out;
}

template <typename T>
double train_epoch(Model<T>& model, const InteractionDataset& dataset, const TrainConfig& config,
                   AdamState<T>& adam, Rng& rng) {
  const std::size_t batches = (dataset.train_edges.size() + config.batch_size - 1) / config.batch_size;
  Gradients<T> grads = model.make_gradients();
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::vector<Triplet> batch = sample_triplets(dataset, config.batch_size, rng);
    grads.clear();
    const T loss = model.loss_and_gradients(batch, static_cast<T>(config.l2_coeff), grads);
    if (!std::isfinite(static_cast<double>(loss))) {
      std::ostringstream msg;
      msg << "non-finite loss in batch " << b << " (step " << adam.step << "); first triplets:";
      for (std::size_t k = 0; k < std::min<std::size_t>(batch.size(), 8); ++k) {
        msg << " (" << batch[k].user << "," << batch[k].pos << "," << batch[k].neg << ")";
      }
      throw NumericError(msg.str());
    }
    adam_step(model.params(), grads, adam, config);
    total += static_cast<double>(loss);
  }
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

namespace {

ValidationMetrics default_validation(const Model<float>& model, const InteractionDataset& dataset) {
  const auto [users, items] = model.final_representations();
  const std::size_t ks[] = {20};
  const EvalResult r = evaluate(users, items, dataset, Split::validation, ks);
  return {r.recall.at(20), r.ndcg.at(20)};
}

}  // namespace

FitResult fit(Model<float>& model, const InteractionDataset& dataset, const TrainConfig& config,
              Validator validator) {
  config.validate();
  if (!validator) {
    if (dataset.val_edges.empty()) {
      throw DataError("validation split is empty; disable evaluation-based early stopping "
                      "(max_epochs with a custom validator) to train without it");
    }
    validator = [&dataset](const Model<float>& m, std::size_t) { return default_validation(m, dataset); };
  }

  FitResult result;
  AdamState<float> adam = make_adam_state(model.params());
  result.initial = validator(model, 0);
  result.best = result.initial;
  result.best_params = model.params();
  result.best_adam = adam;
  Rng rng(derive_seed(config.seed, 0x7472616eULL));

  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double loss = train_epoch(model, dataset, config, adam, rng);
    const ValidationMetrics val = validator(model, epoch);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({epoch, loss, val.recall20, val.ndcg20, seconds});
    spdlog::debug("epoch {} loss {:.6f} val R@20 {:.4f} N@20 {:.4f}", epoch, loss, val.recall20, val.ndcg20);

    if (val.recall20 > result.best.recall20) {
      result.best = val;
      result.best_epoch = epoch;
      result.best_params = model.params();
      result.best_adam = adam;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.params() = result.best_params;
  return result;
}

std::string to_json_line(const EpochLog& entry) {
  nlohmann::ordered_json j;
  j["epoch"] = entry.epoch;
  j["loss"] = entry.loss;
  j["val_recall@20"] = entry.val_recall20;
  j["val_ndcg@20"] = entry.val_ndcg20;
  j["seconds"] = entry.seconds;
  return j.dump();
}

template AdamState<float> make_adam_state(const ModelParams<float>&);
template AdamState<double> make_adam_state(const ModelParams<double>&);
template void adam_step(ModelParams<float>&, const Gradients<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(ModelParams<double>&, const Gradients<double>&, AdamState<double>&, const TrainConfig&);
template double train_epoch(Model<float>&, const InteractionDataset&, const TrainConfig&, AdamState<float>&, Rng&);
template double train_epoch(Model<double>&, const InteractionDataset&, const TrainConfig&, AdamState<double>&, Rng&);

}  // namespace motor
