#pragma once

#include <memory>

#include "rsp/losses.hpp"
#include "rsp/optim.hpp"
#include "rsp/train.hpp"

namespace rsp {

struct ConsistencyConfig {
  double lambda = 1.0;  // consistency weight; 0 disables the unlabeled branch
  int mu = 7;           // unlabeled-to-labeled batch ratio
  int batch = 4;        // labeled batch size B
  int epochs = 90;
  double tau_c = 0.0;   // confidence mask threshold, [0, 1.01]
  PseudoMode pseudo = PseudoMode::hard;
  double eps_ls = 0.1;  // smoothing for soft pseudo labels
  int n_aug = 7;        // strong-policy draws per student view, 1..7
  AdamConfig adam;
  std::vector<int> milestones{30, 60};
  double gamma = 0.1;
  int patch = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

// Frozen teacher + student whose pairwise MLP and task head train while the
// backbone stays fixed. Both start value-identical to the fine-tuned model.
struct TeacherStudent {
  std::unique_ptr<DownstreamNet> teacher, student;
};
TeacherStudent init_teacher_student(const Checkpoint& f_ft);

// Reshuffling index stream: hands out a seed-shuffled order and reshuffles
// on wrap-around, so an epoch's worth of draws covers the pool.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> idx, Rng* rng);
  std::vector<int> next(int n);
  int pool_size() const { return static_cast<int>(order_.size()); }

 private:
  std::vector<int> order_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

// One training draw: B labeled indices + mu*B unlabeled indices.
struct BatchPlan {
  std::vector<int> labeled, unlabeled;
};
BatchPlan build_batch(BatchSampler& labeled, BatchSampler& unlabeled, int b, int mu);

struct ConsistencyResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_metric = 0.0;
  std::vector<double> sup_loss, cons_loss, mask_frac, val_loss, val_acc;
  // Per-epoch parameter checksums for the swap/freeze contracts.
  std::vector<std::uint64_t> teacher_start, teacher_end, student_end, student_backbone;
};

// Teacher-student training from a fine-tuned checkpoint. Within an epoch the
// teacher is frozen; labeled batches go through the fine-tune augmentation,
// teacher inputs through the weak policy, student unlabeled inputs through
// the strong policy. At each epoch end the student's parameters become the
// new teacher. Selection follows the fine-tune rule on the student.
ConsistencyResult consistency_train(const Checkpoint& f_ft, const SynthDataset& data,
                                    const std::vector<int>& labeled_idx,
                                    const std::vector<int>& unlabeled_idx,
                                    const ConsistencyConfig& cfg,
                                    MetricsLog* log = nullptr);

}  // namespace rsp
