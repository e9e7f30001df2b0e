#pragma once

#include <functional>
#include <vector>

#include "ace/checkpoint.hpp"
#include "ace/config.hpp"
#include "ace/data.hpp"
#include "ace/model.hpp"
#include "ace/optim.hpp"

namespace ace {

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0, recon = 0, gen = 0, cls_nll = 0;
  double holdout_acc = 0, holdout_recon = 0;
  double lr = 0;
};

// Deterministic train/holdout split and epoch loop.  The same seed always
// yields the same batches, noise draws, and therefore the same parameters.
class Trainer {
 public:
  Trainer(RunConfig cfg, const Dataset& data);
  Trainer(CheckpointData resume, const Dataset& data);

  // Runs until cfg.epochs, invoking on_epoch after each epoch's holdout pass.
  void run(const std::function<void(const EpochStats&)>& on_epoch);

  EpochStats run_epoch();
  EpochStats evaluate();  // holdout metrics only

  AceModel& model() { return *model_; }
  Adam& adam() { return adam_; }
  const RunConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }

  const std::vector<std::size_t>& train_indices() const { return train_idx_; }
  const std::vector<std::size_t>& holdout_indices() const { return holdout_idx_; }

 private:
  void split();

  RunConfig cfg_;
  const Dataset& data_;
  std::unique_ptr<AceModel> model_;
  Adam adam_;
  Schedule schedule_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> train_idx_, holdout_idx_;
};

}  // namespace ace
