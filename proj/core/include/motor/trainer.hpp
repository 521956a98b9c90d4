#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "motor/backbones.hpp"
#include "motor/dataset.hpp"
#include "motor/rng.hpp"

namespace motor {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 1000;
  std::size_t patience = 20;
  double l2_coeff = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

/// Adam moments per parameter block (same order as ModelParams::blocks()).
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ModelParams<T>& params);

/// One Adam step. Sparse blocks update moments and values only on touched
/// rows; bias correction uses the global step count.
template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& config);

/// Draws (u, i) uniformly from the train edges and a negative i' with
/// r_{u,i'} = 0 by rejection (200 attempts), falling back to a uniform draw
/// from the complement. Throws DataError on an empty train split or a user
/// who interacted with every item.
std::vector<Triplet> sample_triplets(const InteractionDataset& dataset, std::size_t batch_size,
                                     Rng& rng);

/// ceil(|train| / batch_size) sampled batches, one optimizer step each.
/// Returns the mean batch loss. Throws NumericError on a non-finite loss.
template <typename T>
double train_epoch(Model<T>& model, const InteractionDataset& dataset, const TrainConfig& config,
                   AdamState<T>& adam, Rng& rng);

struct ValidationMetrics {
  double recall20 = 0.0;
  double ndcg20 = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_recall20 = 0.0;
  double val_ndcg20 = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  ModelParams<float> best_params;
  AdamState<float> best_adam;
  std::size_t best_epoch = 0;  // 0 = the initial model
  ValidationMetrics initial;
  ValidationMetrics best;
  std::vector<EpochLog> log;
  bool stopped_early = false;
};

using Validator = std::function<ValidationMetrics(const Model<float>&, std::size_t epoch)>;

/// Trains with early stopping on validation Recall@20. The initial model is
/// evaluated first; training stops once `patience` consecutive epochs fail to
/// improve the best value, or at max_epochs. On return the model holds the
/// best parameters. Without a custom validator the validation split must be
/// non-empty (DataError otherwise).
FitResult fit(Model<float>& model, const InteractionDataset& dataset, const TrainConfig& config,
              Validator validator = {});

/// Serializes one log entry as a single JSON line.
std::string to_json_line(const EpochLog& entry);

}  // namespace motor
