#include "ace/train.hpp"

#include <algorithm>
#include <numeric>

namespace ace {

namespace {

// Fisher-Yates with the counter stream so splits/batch orders are portable.
void shuffle_indices(std::vector<std::size_t>& idx, CounterRng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

}  // namespace

Trainer::Trainer(RunConfig cfg, const Dataset& data)
    : cfg_(std::move(cfg)), data_(data) {
  if (data_.channels != cfg_.model.channels ||
      data_.height != cfg_.model.height || data_.width != cfg_.model.width)
    throw ContractError(
        "dataset canvas " + std::to_string(data_.channels) + "x" +
        std::to_string(data_.height) + "x" + std::to_string(data_.width) +
        " does not match configured model canvas");
  model_ = std::make_unique<AceModel>(cfg_.model, cfg_.seed);
  schedule_ = {cfg_.effective_lr(), cfg_.decay_epochs};
  split();
}

Trainer::Trainer(CheckpointData resume, const Dataset& data)
    : cfg_(resume.config), data_(data) {
  model_ = std::move(resume.model);
  adam_ = std::move(resume.adam);
  epoch_ = resume.epoch;
  schedule_ = {cfg_.effective_lr(), cfg_.decay_epochs};
  split();
}

void Trainer::split() {
  std::vector<std::size_t> idx(data_.count());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  CounterRng rng(CounterRng::derive(cfg_.seed, 0xACE5));
  shuffle_indices(idx, rng);
  std::size_t n_hold = static_cast<std::size_t>(
      cfg_.holdout * static_cast<double>(data_.count()));
  holdout_idx_.assign(idx.begin(), idx.begin() + n_hold);
  train_idx_.assign(idx.begin() + n_hold, idx.end());
  if (train_idx_.empty()) throw ContractError("empty training split");
}

EpochStats Trainer::run_epoch() {
  double lr = lr_at(schedule_, epoch_);
  std::vector<std::size_t> order = train_idx_;
  CounterRng erng(CounterRng::derive(cfg_.seed, 0xE0000 + epoch_));
  shuffle_indices(order, erng);

  EpochStats stats;
  stats.epoch = epoch_;
  stats.lr = lr;
  double weight = 0.0;
  auto& params = model_->params();
  for (std::size_t start = 0; start < order.size();
       start += cfg_.batch_size) {
    std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
    TensorF x = data_.batch(batch);
    std::vector<std::size_t> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      labels[i] = data_.labels[batch[i]];
    model_->zero_grad();
    AceLoss loss = model_->forward_train(x, labels, true);
    backward(loss.total);
    adam_.step(params, lr);
    double w = static_cast<double>(batch.size());
    stats.total += loss.total.item() * w;
    stats.recon += loss.ae.recon_error.item() * w;
    stats.gen += loss.ae.gen_error.item() * w;
    stats.cls_nll += loss.classifier_nll.item() * w;
    weight += w;
  }
  stats.total /= weight;
  stats.recon /= weight;
  stats.gen /= weight;
  stats.cls_nll /= weight;
  ++epoch_;

  EpochStats hold = evaluate();
  stats.holdout_acc = hold.holdout_acc;
  stats.holdout_recon = hold.holdout_recon;
  return stats;
}

EpochStats Trainer::evaluate() {
  EpochStats stats;
  stats.epoch = epoch_;
  if (holdout_idx_.empty()) return stats;
  double correct = 0, recon = 0, weight = 0;
  for (std::size_t start = 0; start < holdout_idx_.size();
       start += cfg_.batch_size) {
    std::size_t end = std::min(holdout_idx_.size(), start + cfg_.batch_size);
    std::vector<std::size_t> batch(holdout_idx_.begin() + start,
                                   holdout_idx_.begin() + end);
    TensorF x = data_.batch(batch);
    std::vector<std::size_t> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      labels[i] = data_.labels[batch[i]];
    TestOutput out = model_->forward_test(x, &labels);
    const float* probs = out.class_probs.data();
    std::size_t n_cls = model_->config().n_classes;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n_cls; ++c)
        if (probs[i * n_cls + c] > probs[i * n_cls + best]) best = c;
      if (best == labels[i]) correct += 1.0;
    }
    recon += out.loss.ae.recon_error.item() * static_cast<double>(batch.size());
    weight += static_cast<double>(batch.size());
  }
  stats.holdout_acc = correct / weight;
  stats.holdout_recon = recon / weight;
  return stats;
}

void Trainer::run(const std::function<void(const EpochStats&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    EpochStats s = run_epoch();
    if (on_epoch) on_epoch(s);
  }
}

}  // namespace ace
