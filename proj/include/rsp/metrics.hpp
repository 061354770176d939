#pragma once

#include <string>
#include <vector>

#include "rsp/common.hpp"

namespace rsp {

// Two-way random-effects, single-measure, absolute-agreement intra-class
// correlation. The variant string names the form so reports stay explicit.
struct IccResult {
  double icc = 0.0;
  double lo = 0.0, hi = 0.0;  // 95% CI from F-distribution quantiles
  std::string variant = "ICC(2,1) absolute agreement";
  bool degenerate = false;  // no between-subject variance
};

// ratings: n subjects x k raters, row-major. n >= 2, k >= 2, finite.
IccResult icc(const std::vector<std::vector<double>>& ratings);

struct AucResult {
  double auc = 0.5;
  double var = 0.0;  // DeLong variance of the AUC estimate
  double lo = 0.0, hi = 1.0;  // 95% CI, clipped to [0,1]
  int n_pos = 0, n_neg = 0;
};

// AUC as the normalized Mann-Whitney statistic (ties count 0.5) with the
// DeLong structural-component variance. labels are 0/1; both classes
// must be present.
AucResult auc_delong(const std::vector<double>& scores, const std::vector<int>& labels);

// Two-tailed paired DeLong test for two score vectors over the same items.
// Returns p in [0,1]; symmetric in (a, b).
double delong_test(const std::vector<double>& scores_a,
                   const std::vector<double>& scores_b, const std::vector<int>& labels);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

// Sum over classes of (support_c / n) * F1_c; absent classes carry zero
// weight. Per-class F1 = 0 when precision + recall = 0.
double weighted_f1(const std::vector<int>& preds, const std::vector<int>& labels);

}  // namespace rsp
