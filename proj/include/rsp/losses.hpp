#pragma once

#include <vector>

#include "rsp/tensor.hpp"
#include "rsp/common.hpp"

namespace rsp {

using NT = TensorD;

// Mean cross-entropy of softmax(logits) rows against integer labels.
// dlogits (optional) receives (softmax - onehot)/N.
double softmax_ce(const NT& logits, const std::vector<int>& labels, NT* dlogits = nullptr);

// Mean cross-entropy against per-row target distributions (soft labels).
double softmax_ce_targets(const NT& logits, const NT& targets, NT* dlogits = nullptr);

// Row-wise softmax.
NT softmax_rows(const NT& logits);

// Mean over all elements of (pred - target)^2; dpred = 2(pred-target)/numel.
double mse_elems(const NT& pred, const NT& target, NT* dpred = nullptr);

// Scalar-prediction MSE against a label vector; pred is [N] or [N,1].
double mse_scalar(const NT& pred, const std::vector<double>& target, NT* dpred = nullptr);

// Batch mean of the per-sample summed squared error (unit-variance Gaussian
// reconstruction surrogate); dpred = 2(pred-target)/N.
double sse_batchmean(const NT& pred, const NT& target, NT* dpred = nullptr);

enum class NceMode { standard, literal };

// Contrastive loss from raw vectors. standard: positive appears in the
// denominator; literal: denominator sums negatives only.
double info_nce(const std::vector<double>& q, const std::vector<double>& k_plus,
                const std::vector<std::vector<double>>& negatives, double tau,
                NceMode mode = NceMode::standard);

// Batched form over raw similarities sims [N, 1+K] with column 0 = positive.
// dsims (optional) receives the gradient of the mean loss.
double info_nce_batch(const NT& sims, double tau, NceMode mode, NT* dsims = nullptr);

// Batch mean of the per-sample closed-form KL(q(z|x) || N(0,I)):
// 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1).
double vae_kl(const NT& mu, const NT& logvar, NT* dmu = nullptr, NT* dlogvar = nullptr);

enum class PseudoMode { hard, soft };

// Classification consistency: pseudo label = argmax of each teacher row
// (ties -> lowest index), optionally smoothed by eps_ls in soft mode; rows
// with max prob < tau_c contribute zero; sum divided by the full batch size.
// mask_frac (optional) receives the fraction of rows that passed the mask.
double consistency_cls(const NT& teacher_probs, const NT& student_logits, double tau_c,
                       PseudoMode mode, double eps_ls, NT* dlogits = nullptr,
                       double* mask_frac = nullptr);

// Regression consistency: mean squared teacher/student difference; the
// gradient flows to the student only.
double consistency_reg(const NT& teacher_pred, const NT& student_pred, NT* dstudent = nullptr);

// L_s + lambda * L_c.
double total_loss(double ls, double lc, double lambda);

}  // namespace rsp
