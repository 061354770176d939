#pragma once

#include <deque>

#include "rsp/losses.hpp"
#include "rsp/optim.hpp"
#include "rsp/train.hpp"

namespace rsp {

// FIFO of encoded key vectors with fixed capacity; oldest rows evicted
// first. Pushing more rows than the capacity at once is an argument error.
class KeyQueue {
 public:
  explicit KeyQueue(int capacity);
  void push(const NT& keys);  // [n,d] rows, oldest-first eviction
  int size() const { return static_cast<int>(rows_.size()); }
  int capacity() const { return cap_; }
  NT tensor() const;  // [size,d], row 0 = oldest

 private:
  int cap_;
  int dim_ = -1;
  std::deque<std::vector<double>> rows_;
};

struct MocoConfig {
  int epochs = 20;
  int batch = 32;
  SgdConfig sgd;
  double m = 0.999;   // key-encoder momentum
  int queue = 256;    // capacity (desk default; full-scale runs use 8192)
  double tau = 0.0;   // temperature; must be set explicitly, no silent default
  NceMode mode = NceMode::standard;
  AugPolicy aug = moco_policy();  // two-view augmentation
  EncoderConfig enc;
  int patch = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MocoResult {
  Checkpoint ckpt;
  std::vector<double> epoch_loss;
  std::vector<std::uint64_t> key_checksums;  // key-encoder params after each epoch
};

// Two-view contrastive pretraining with a momentum key encoder and a key
// queue. Keys join the queue only after the batch's loss is computed, so a
// batch never meets its own positives among the negatives.
MocoResult moco_pretrain(const PatchPool& data, const MocoConfig& cfg,
                         MetricsLog* log = nullptr);

struct VaeTrainConfig {
  int epochs = 20;
  int batch = 32;
  AdamConfig adam;
  VaeConfig vae;
  std::uint64_t seed = 1;

  void validate() const;
};

struct VaeResult {
  Checkpoint ckpt;
  std::vector<double> epoch_loss, epoch_recon, epoch_kl;
};

// Reconstruction + KL training of the variational encoder; the checkpoint
// keeps the encoder for downstream fine-tuning.
VaeResult vae_pretrain(const PatchPool& data, const VaeTrainConfig& cfg,
                       MetricsLog* log = nullptr);

}  // namespace rsp
