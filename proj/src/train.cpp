#include "ser/train.hpp"

#include "ser/metrics.hpp"
#include "ser/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace ser {
namespace {

std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct PassStats {
  double loss = 0.0;
  double acc = 0.0;
};

template <typename S>
PassStats eval_pass(ModelParams<S>& params, const Dataset& data, const ArchConfig& arch, int batch_size) {
  const Evaluation e = evaluate(params, data, arch, batch_size);
  return {e.mean_loss, e.report.accuracy};
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (!(lr0 > 0.0)) fail("train.lr0 must be positive");
  if (!(weight_decay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (batch_size < 2) fail("train.batch_size must be >= 2 (batch norm)");
  if (max_epochs < 1) fail("train.max_epochs must be >= 1");
  if (patience < 1) fail("train.patience must be >= 1");
  if (!(eta_min >= 0.0) || eta_min > lr0) fail("train.eta_min must lie in [0, lr0]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0))
    fail("Adam constants need beta in [0,1) and eps > 0");
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw Error(ErrorCode::ConfigError, "patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double metric) {
  if (!seen_ || metric > best_) {
    seen_ = true;
    best_ = metric;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(counter_hash({seed, static_cast<std::uint64_t>(epoch), 0x5348554646ULL}));
  std::shuffle(order.begin(), order.end(), gen);

  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += b)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

template <typename S>
TrainResult<S> train(const Dataset& train_set, const Dataset& val_set, const ArchConfig& arch, const TrainConfig& cfg,
                     const TrainHooks<S>& hooks, std::optional<ModelParams<S>> initial) {
  arch.validate();
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  if (val_set.empty()) throw Error(ErrorCode::EmptySplit, "val split is empty");

  ModelParams<S> params = initial ? std::move(*initial) : init_params<S>(arch, cfg.seed);
  std::vector<Tensor<S>> trainable = params.trainable();
  OptimizerState<S> state = make_optimizer_state<S>(trainable);

  TrainResult<S> result;
  EarlyStopping stopper(cfg.patience);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, cfg.max_epochs, cfg.lr0, cfg.eta_min);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    std::uint64_t step = 0;
    for (const auto& idx : epoch_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch)) {
      Tensor<S> x = make_batch<S>(train_set, idx, arch);
      if (hooks.augment) hooks.augment(x, epoch, step);
      const ForwardContext ctx{Mode::Train, cfg.seed, static_cast<std::uint64_t>(epoch), step};
      const Tensor<S> logits = model_forward(x, params, arch, ctx);
      const auto labels = batch_labels(train_set, idx);
      Tensor<S> loss = cross_entropy(logits, std::span<const int>(labels));
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw Error(ErrorCode::NonFiniteLoss, "loss is " + format_double(loss_value) + " at epoch " +
                                                  std::to_string(epoch) + ", step " + std::to_string(step) +
                                                  " (lr " + format_double(lr) + "); training diverged");
      params.zero_grad();
      backward(loss);
      adam_step<S>(trainable, state, lr, cfg.weight_decay, cfg.adam);

      loss_sum += loss_value * static_cast<double>(idx.size());
      const auto preds = argmax_rows(logits);
      for (std::size_t k = 0; k < preds.size(); ++k) correct += preds[k] == labels[k];
      ++step;
    }

    const PassStats val = eval_pass(params, val_set, arch, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    rec.val_loss = val.loss;
    rec.val_acc = val.acc;
    result.log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (stopper.update(epoch, val.acc)) result.best = params.clone();
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  params.zero_grad();
  result.last = std::move(params);
  return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : log)
    out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
        << format_double(r.train_acc) << ',' << format_double(r.val_loss) << ',' << format_double(r.val_acc) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

template TrainResult<float> train(const Dataset&, const Dataset&, const ArchConfig&, const TrainConfig&,
                                  const TrainHooks<float>&, std::optional<ModelParams<float>>);
template TrainResult<double> train(const Dataset&, const Dataset&, const ArchConfig&, const TrainConfig&,
                                   const TrainHooks<double>&, std::optional<ModelParams<double>>);

}  // namespace ser
