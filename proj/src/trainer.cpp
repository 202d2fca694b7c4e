#include "kilnnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"
#include "kilnnet/hash.hpp"

namespace kiln {

void TrainConfig::validate() const {
  if (epochs == 0) fail(ErrorKind::config, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::config, "batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::config, "learning_rate must be a finite non-negative number");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::config, "momentum must be in [0,1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    fail(ErrorKind::config, "weight_decay must be a finite non-negative number");
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_acc,seconds\n";
  for (const auto& r : epochs) {
    out += std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' +
           format_double(r.val_loss) + ',' + format_double(r.val_acc) + ',' +
           format_double(r.seconds) + '\n';
  }
  return out;
}

void write_train_log(const TrainLog& log, const std::string& path) {
  write_file(path, log.to_csv());
}

Sgd::Sgd(std::vector<Tensor> parameters, double learning_rate, double momentum,
         double weight_decay)
    : parameters_(std::move(parameters)),
      learning_rate_(learning_rate),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  for (const auto& p : parameters_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::zero_grad() {
  for (const auto& p : parameters_) p.zero_grad();
}

void Sgd::step() {
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    const auto& p = parameters_[i];
    auto values = p.mutable_values();
    auto& v = velocity_[i];
    if (!p.has_grad()) {
      // Untouched by this batch: only decay contributes.
      for (std::size_t k = 0; k < values.size(); ++k) {
        v[k] = momentum_ * v[k] + weight_decay_ * values[k];
        values[k] -= learning_rate_ * v[k];
      }
      continue;
    }
    const auto g = p.grad();
    for (std::size_t k = 0; k < values.size(); ++k) {
      v[k] = momentum_ * v[k] + (g[k] + weight_decay_ * values[k]);
      values[k] -= learning_rate_ * v[k];
    }
  }
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

void require_split(const Manifest& manifest, Split split) {
  if (manifest.count(split) == 0) {
    fail(ErrorKind::validation, "manifest has no " + std::string(to_string(split)) + " records");
  }
}

}  // namespace

LossReport evaluate_loss(Network& network, const ChipSet& chips, std::size_t batch_size) {
  const std::size_t n = chips.pixels.size();
  if (n == 0) fail(ErrorKind::validation, "cannot evaluate an empty split");
  if (batch_size == 0) fail(ErrorKind::config, "batch_size must be positive");
  NoGradGuard no_grad;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    const Tensor logits = network.forward(stack_chips(chips, begin, end), Mode::eval);
    const std::span<const int> labels(chips.labels.data() + begin, end - begin);
    loss_sum += softmax_cross_entropy(logits, labels).item() * static_cast<double>(end - begin);
    const std::size_t k = logits.dim(1);
    const auto v = logits.values();
    for (std::size_t i = 0; i < end - begin; ++i) {
      correct += argmax_row(v.subspan(i * k, k)) == static_cast<std::size_t>(labels[i]);
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n),
          n};
}

LossReport evaluate_loss(Network& network, const Manifest& manifest, Split split,
                         std::size_t batch_size) {
  require_split(manifest, split);
  return evaluate_loss(network, load_chips(manifest, split), batch_size);
}

Tensor predict(Network& network, const ChipSet& chips, std::size_t batch_size) {
  const std::size_t n = chips.pixels.size();
  if (batch_size == 0) fail(ErrorKind::config, "batch_size must be positive");
  const std::size_t k = static_cast<std::size_t>(network.config().num_classes);
  std::vector<double> out;
  out.reserve(n * k);
  NoGradGuard no_grad;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    const Tensor probs = softmax(network.forward(stack_chips(chips, begin, end), Mode::eval));
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return Tensor({n, k}, std::move(out));
}

TrainResult train(Network& network, const Manifest& manifest, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (network.config().num_classes != kNumClasses) {
    fail(ErrorKind::config, "network has " + std::to_string(network.config().num_classes) +
                                " classes, the taxonomy has " + std::to_string(kNumClasses));
  }
  require_split(manifest, Split::train);
  require_split(manifest, Split::val);
  const auto train_set = std::make_shared<const ChipSet>(load_chips(manifest, Split::train));
  const ChipSet val_set = load_chips(manifest, Split::val);
  if (static_cast<int>(train_set->size) != network.config().input_size) {
    fail(ErrorKind::config, "chips are " + std::to_string(train_set->size) +
                                " px but the network expects " +
                                std::to_string(network.config().input_size));
  }
  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);
  auto out_path = [&](const std::string& leaf) {
    return (std::filesystem::path(config.out_dir) / leaf).string();
  };

  std::vector<Tensor> params;
  for (const auto& p : network.parameters()) params.push_back(p.tensor);
  Sgd sgd(params, config.learning_rate, config.momentum, config.weight_decay);

  TrainResult result;
  double best_val = 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    BatchIterator batches(train_set, config.batch_size,
                          fnv1a64("epoch" + std::to_string(epoch), config.seed), config.augment);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    while (auto batch = batches.next()) {
      ++batch_index;
      sgd.zero_grad();
      const Tensor logits = network.forward(batch->images, Mode::train);
      Tensor loss = softmax_cross_entropy(logits, batch->labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        fail(ErrorKind::divergence, "non-finite training loss at epoch " + std::to_string(epoch) +
                                        ", batch " + std::to_string(batch_index));
      }
      loss.backward();
      sgd.step();
      loss_sum += value * static_cast<double>(batch->labels.size());
      seen += batch->labels.size();
    }
    const LossReport val = evaluate_loss(network, val_set, config.batch_size);
    if (!std::isfinite(val.loss)) {
      fail(ErrorKind::divergence, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(seen), val.loss, val.accuracy, 0.0};
    if (config.timing) {
      record.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.log.epochs.push_back(record);

    const bool improved = epoch == 1 || val.loss < best_val;
    const bool periodic = config.checkpoint_every != 0 && epoch % config.checkpoint_every == 0;
    const bool final_epoch = epoch == config.epochs;
    if (improved || periodic || final_epoch) {
      Checkpoint ck = snapshot(network);
      ck.metadata["epoch"] = std::to_string(epoch);
      ck.metadata["val_loss"] = format_double(val.loss);
      if (improved) {
        best_val = val.loss;
        result.best = ck;
        result.best_epoch = epoch;
        if (!config.out_dir.empty()) save_checkpoint(ck, out_path("best.ckpt"));
      }
      if (periodic && !config.out_dir.empty()) {
        char leaf[32];
        std::snprintf(leaf, sizeof leaf, "epoch_%04zu.ckpt", epoch);
        save_checkpoint(ck, out_path(leaf));
      }
      if (final_epoch) {
        result.last = std::move(ck);
        if (!config.out_dir.empty()) save_checkpoint(result.last, out_path("last.ckpt"));
      }
    }
    if (!config.out_dir.empty()) write_train_log(result.log, out_path("train_log.csv"));
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace kiln
