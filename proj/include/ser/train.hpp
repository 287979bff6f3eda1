#pragma once

#include "ser/dataset.hpp"
#include "ser/model.hpp"
#include "ser/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace ser {

struct TrainConfig {
  double lr0 = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 0;
  AdamConstants adam;
  double eta_min = 0.0;

  /// Throws ConfigError when an invariant fails.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

/// Tracks the best value of a maximized metric. Ties keep the earlier epoch.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Returns true when `metric` is a new best.
  bool update(int epoch, double metric);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_ = 0.0;
  int since_best_ = 0;
  bool seen_ = false;
};

template <typename Scalar>
struct TrainHooks {
  /// Called on every training batch before the forward pass. Empty by default:
  /// no augmentation is defined.
  std::function<void(Tensor<Scalar>& batch, int epoch, std::uint64_t step)> augment;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> best;
  ModelParams<Scalar> last;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  bool early_stopped = false;
};

/// Seeded mini-batch Adam with cosine LR per epoch; keeps the parameters of
/// the epoch with the highest validation accuracy. `initial` replaces the
/// seeded initialization when given.
template <typename Scalar>
TrainResult<Scalar> train(const Dataset& train_set, const Dataset& val_set, const ArchConfig& arch,
                          const TrainConfig& cfg, const TrainHooks<Scalar>& hooks = {},
                          std::optional<ModelParams<Scalar>> initial = std::nullopt);

/// Batch order for one epoch: a seeded permutation cut into batch_size
/// chunks; a trailing chunk of one joins the previous chunk (batch norm
/// needs two samples).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch);

/// `epoch,lr,train_loss,train_acc,val_loss,val_acc`, shortest round-trip
/// decimal for every value.
void write_train_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);

}  // namespace ser
