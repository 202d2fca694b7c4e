#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kilnnet/architecture.hpp"
#include "kilnnet/checkpoint.hpp"
#include "kilnnet/dataset.hpp"

namespace kiln {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  /// Also keep a checkpoint every this many epochs (0: only best and last).
  std::size_t checkpoint_every = 0;
  Augment augment = Augment::none;
  /// Record wall time per epoch. Off by default so that logs from equal
  /// seeds are byte-identical.
  bool timing = false;
  /// When set, best.ckpt, last.ckpt, epoch_NNNN.ckpt and train_log.csv are
  /// written here as training proceeds.
  std::string out_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// `epoch,train_loss,val_loss,val_acc,seconds` with shortest round-trip
  /// decimals.
  std::string to_csv() const;
};

void write_train_log(const TrainLog& log, const std::string& path);

struct TrainResult {
  TrainLog log;
  Checkpoint best;  // lowest validation loss, earliest on ties
  Checkpoint last;
  std::size_t best_epoch = 0;
};

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * p)
///   p <- p - learning_rate * v
class Sgd {
 public:
  Sgd(std::vector<Tensor> parameters, double learning_rate, double momentum, double weight_decay);

  void zero_grad();
  void step();

 private:
  std::vector<Tensor> parameters_;
  std::vector<std::vector<double>> velocity_;
  double learning_rate_;
  double momentum_;
  double weight_decay_;
};

/// Trains in place. Batches are drawn in a seeded order per epoch and the
/// update order is serial, so equal seeds give bit-identical parameters and
/// logs at any thread count. `on_epoch` sees each record as it completes.
TrainResult train(Network& network, const Manifest& manifest, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct LossReport {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Eval-mode mean cross-entropy and top-1 accuracy (first maximum wins ties).
LossReport evaluate_loss(Network& network, const ChipSet& chips, std::size_t batch_size = 64);
LossReport evaluate_loss(Network& network, const Manifest& manifest, Split split,
                         std::size_t batch_size = 64);

/// Eval-mode class probabilities, [N, num_classes] in chip order.
Tensor predict(Network& network, const ChipSet& chips, std::size_t batch_size = 64);

}  // namespace kiln
