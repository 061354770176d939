#pragma once

#include <array>

#include "rsp/optim.hpp"
#include "rsp/train.hpp"

namespace rsp {

struct PretrainConfig {
  int epochs = 250;
  int batch = 64;
  SgdConfig sgd;             // lr 0.01 constant, Nesterov momentum 0.9, wd 1e-4
  LookaheadConfig lookahead; // k = 5, slow step 0.5
  EncoderConfig enc;
  int patch = 32;
  std::uint64_t seed = 1;

  void validate() const;  // positive sizes; optimizer configs validate themselves
};

struct PretrainResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<double> train_loss, train_acc, val_loss, val_acc;
  std::array<long, 6> label_counts{};  // permutation labels drawn during training
};

// Sequence-ordering pretext training. Each epoch draws one uniform
// permutation label per training tuple; patches go through the pretraining
// augmentation policy. Validation tuples keep fixed labels and no
// augmentation; the checkpoint with the lowest validation loss wins.
PretrainResult rsp_pretrain(const TuplePool& train, const TuplePool& val,
                            const PretrainConfig& cfg, MetricsLog* log = nullptr);

}  // namespace rsp
