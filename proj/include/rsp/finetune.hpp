#pragma once

#include "rsp/optim.hpp"
#include "rsp/train.hpp"

namespace rsp {

struct FinetuneConfig {
  int epochs = 90;
  int batch = 4;
  AdamConfig adam;  // lr 1e-4, betas (0.9, 0.999), wd 1e-4
  std::vector<int> milestones{30, 60};  // lr x0.1 at each, strictly increasing < epochs
  double gamma = 0.1;
  TaskMode mode = TaskMode::regression;
  int n_classes = 4;  // classification only
  int h1 = 256, h2 = 128;
  AugPolicy aug = finetune_policy();  // training-view augmentation
  int patch = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FinetuneResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_metric = 0.0;  // val loss (regression) or val accuracy (classification)
  std::vector<double> train_loss, train_acc, val_loss, val_acc, lr_schedule;
};

// Supervised training of every layer starting from a pretraining checkpoint
// (kinds rsp/moco/vae/random; the task head starts fresh). train_idx selects
// labeled pool examples; data.val is the selection split. Best checkpoint by
// lowest val loss (regression) or highest val accuracy (classification),
// first epoch on ties.
FinetuneResult finetune(const Checkpoint& init, const SynthDataset& data,
                        const std::vector<int>& train_idx, const FinetuneConfig& cfg,
                        MetricsLog* log = nullptr);

}  // namespace rsp
