#include "rsp/losses.hpp"

#include <algorithm>
#include <cmath>

namespace rsp {

namespace {

void check_finite(const NT& t, const char* who) {
  if (!all_finite(t)) throw NumericError(std::string(who) + ": non-finite input");
}

// log softmax of one row, numerically stable.
void log_softmax_row(const double* x, int c, double* out) {
  double mx = x[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < c; ++i) sum += std::exp(x[i] - mx);
  const double lse = mx + std::log(sum);
  for (int i = 0; i < c; ++i) out[i] = x[i] - lse;
}

}  // namespace

NT softmax_rows(const NT& logits) {
  check_finite(logits, "softmax_rows");
  const int n = logits.dim(0), c = logits.dim(1);
  NT out({n, c});
  std::vector<double> ls(c);
  for (int i = 0; i < n; ++i) {
    log_softmax_row(logits.data() + static_cast<std::size_t>(i) * c, c, ls.data());
    for (int j = 0; j < c; ++j) out.at2(i, j) = std::exp(ls[j]);
  }
  return out;
}

double softmax_ce(const NT& logits, const std::vector<int>& labels, NT* dlogits) {
  check_finite(logits, "softmax_ce");
  if (logits.rank() != 2) throw ArgumentError("softmax_ce: logits must be [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ArgumentError("softmax_ce: label count mismatch");
  if (dlogits) {
    *dlogits = NT({n, c});
  }
  double total = 0.0;
  std::vector<double> ls(c);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw ArgumentError("softmax_ce: label out of range");
    log_softmax_row(logits.data() + static_cast<std::size_t>(i) * c, c, ls.data());
    total -= ls[y];
    if (dlogits)
      for (int j = 0; j < c; ++j)
        dlogits->at2(i, j) = (std::exp(ls[j]) - (j == y ? 1.0 : 0.0)) / n;
  }
  return total / n;
}

double softmax_ce_targets(const NT& logits, const NT& targets, NT* dlogits) {
  check_finite(logits, "softmax_ce_targets");
  if (!logits.same_shape(targets))
    throw ArgumentError("softmax_ce_targets: shape mismatch");
  const int n = logits.dim(0), c = logits.dim(1);
  if (dlogits) *dlogits = NT({n, c});
  double total = 0.0;
  std::vector<double> ls(c);
  for (int i = 0; i < n; ++i) {
    log_softmax_row(logits.data() + static_cast<std::size_t>(i) * c, c, ls.data());
    for (int j = 0; j < c; ++j) {
      total -= targets.at2(i, j) * ls[j];
      if (dlogits) dlogits->at2(i, j) = (std::exp(ls[j]) - targets.at2(i, j)) / n;
    }
  }
  return total / n;
}

double mse_elems(const NT& pred, const NT& target, NT* dpred) {
  if (!pred.same_shape(target)) throw ArgumentError("mse_elems: shape mismatch");
  const std::size_t n = pred.v.size();
  if (n == 0) throw ArgumentError("mse_elems: empty input");
  if (dpred) *dpred = NT(pred.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.v[i] - target.v[i];
    total += d * d;
    if (dpred) dpred->v[i] = 2.0 * d / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

double mse_scalar(const NT& pred, const std::vector<double>& target, NT* dpred) {
  if (pred.v.size() != target.size()) throw ArgumentError("mse_scalar: size mismatch");
  NT t(pred.shape);
  t.v.assign(target.begin(), target.end());
  return mse_elems(pred, t, dpred);
}

double sse_batchmean(const NT& pred, const NT& target, NT* dpred) {
  if (!pred.same_shape(target)) throw ArgumentError("sse_batchmean: shape mismatch");
  const int n = pred.dim(0);
  if (dpred) *dpred = NT(pred.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const double d = pred.v[i] - target.v[i];
    total += d * d;
    if (dpred) dpred->v[i] = 2.0 * d / n;
  }
  return total / n;
}

double info_nce(const std::vector<double>& q, const std::vector<double>& k_plus,
                const std::vector<std::vector<double>>& negatives, double tau, NceMode mode) {
  if (tau <= 0.0) throw ArgumentError("info_nce: tau must be positive");
  if (negatives.empty()) throw ArgumentError("info_nce: need at least one negative");
  if (q.size() != k_plus.size()) throw ArgumentError("info_nce: dimension mismatch");
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ArgumentError("info_nce: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double sp = dot(q, k_plus) / tau;
  std::vector<double> sn(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) sn[i] = dot(q, negatives[i]) / tau;
  double mx = mode == NceMode::standard ? sp : sn[0];
  for (double s : sn) mx = std::max(mx, s);
  double denom = 0.0;
  for (double s : sn) denom += std::exp(s - mx);
  if (mode == NceMode::standard) denom += std::exp(sp - mx);
  return mx + std::log(denom) - sp;
}

double info_nce_batch(const NT& sims, double tau, NceMode mode, NT* dsims) {
  if (tau <= 0.0) throw ArgumentError("info_nce_batch: tau must be positive");
  if (sims.rank() != 2 || sims.dim(1) < 2)
    throw ArgumentError("info_nce_batch: sims must be [N,1+K] with K >= 1");
  check_finite(sims, "info_nce_batch");
  const int n = sims.dim(0), c = sims.dim(1);
  if (dsims) *dsims = NT({n, c});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int lo = mode == NceMode::standard ? 0 : 1;
    double mx = sims.at2(i, lo) / tau;
    for (int j = lo; j < c; ++j) mx = std::max(mx, sims.at2(i, j) / tau);
    double denom = 0.0;
    for (int j = lo; j < c; ++j) denom += std::exp(sims.at2(i, j) / tau - mx);
    const double lse = mx + std::log(denom);
    total += lse - sims.at2(i, 0) / tau;
    if (dsims) {
      for (int j = lo; j < c; ++j)
        dsims->at2(i, j) = std::exp(sims.at2(i, j) / tau - lse) / (n * tau);
      dsims->at2(i, 0) -= 1.0 / (n * tau);
    }
  }
  return total / n;
}

double vae_kl(const NT& mu, const NT& logvar, NT* dmu, NT* dlogvar) {
  if (!mu.same_shape(logvar)) throw ArgumentError("vae_kl: shape mismatch");
  check_finite(mu, "vae_kl");
  check_finite(logvar, "vae_kl");
  const int n = mu.dim(0);
  if (dmu) *dmu = NT(mu.shape);
  if (dlogvar) *dlogvar = NT(mu.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < mu.v.size(); ++i) {
    const double var = std::exp(logvar.v[i]);
    if (!(var > 0.0) || !std::isfinite(var)) throw NumericError("vae_kl: variance out of range");
    total += 0.5 * (mu.v[i] * mu.v[i] + var - logvar.v[i] - 1.0);
    if (dmu) dmu->v[i] = mu.v[i] / n;
    if (dlogvar) dlogvar->v[i] = 0.5 * (var - 1.0) / n;
  }
  return total / n;
}

double consistency_cls(const NT& teacher_probs, const NT& student_logits, double tau_c,
                       PseudoMode mode, double eps_ls, NT* dlogits, double* mask_frac) {
  if (!teacher_probs.same_shape(student_logits))
    throw ArgumentError("consistency_cls: shape mismatch");
  check_finite(student_logits, "consistency_cls");
  if (tau_c < 0.0 || tau_c > 1.01)
    throw ArgumentError("consistency_cls: tau_c must be in [0, 1.01]");
  const int u = teacher_probs.dim(0), c = teacher_probs.dim(1);
  if (dlogits) *dlogits = NT({u, c});
  double total = 0.0;
  int passed = 0;
  std::vector<double> ls(c);
  for (int i = 0; i < u; ++i) {
    double sum = 0.0, mx = -1.0;
    int arg = 0;
    for (int j = 0; j < c; ++j) {
      const double p = teacher_probs.at2(i, j);
      if (!(p >= 0.0) || !std::isfinite(p))
        throw NumericError("consistency_cls: teacher row is not a distribution");
      sum += p;
      if (p > mx) {
        mx = p;
        arg = j;
      }
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw NumericError("consistency_cls: teacher row is not normalized");
    if (mx < tau_c) continue;
    ++passed;
    log_softmax_row(student_logits.data() + static_cast<std::size_t>(i) * c, c, ls.data());
    for (int j = 0; j < c; ++j) {
      double t = j == arg ? 1.0 : 0.0;
      if (mode == PseudoMode::soft) t = (1.0 - eps_ls) * t + eps_ls / c;
      total -= t * ls[j];
      if (dlogits) dlogits->at2(i, j) = (std::exp(ls[j]) - t) / u;
    }
  }
  if (mask_frac) *mask_frac = static_cast<double>(passed) / u;
  return total / u;
}

double consistency_reg(const NT& teacher_pred, const NT& student_pred, NT* dstudent) {
  if (!teacher_pred.same_shape(student_pred))
    throw ArgumentError("consistency_reg: shape mismatch");
  return mse_elems(student_pred, teacher_pred, dstudent);
}

double total_loss(double ls, double lc, double lambda) {
  if (lambda < 0.0) throw ArgumentError("total_loss: lambda must be nonnegative");
  return ls + lambda * lc;
}

}  // namespace rsp
