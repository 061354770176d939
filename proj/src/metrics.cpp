#include "rsp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

namespace rsp {

namespace {

double z975() {
  static const double z = boost::math::quantile(boost::math::normal(), 0.975);
  return z;
}

std::vector<double> midranks(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> ord(n);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(), [&](int a, int b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && x[ord[j]] == x[ord[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (int t = i; t < j; ++t) r[ord[t]] = mid;
    i = j;
  }
  return r;
}

// DeLong structural components: V10 per positive, V01 per negative.
struct DelongParts {
  double auc = 0.0;
  std::vector<double> v10, v01;
};

DelongParts delong_parts(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ArgumentError("auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("auc: labels must be 0/1");
    (labels[i] == 1 ? xs : ys).push_back(scores[i]);
  }
  const int m = static_cast<int>(xs.size()), n = static_cast<int>(ys.size());
  if (m == 0 || n == 0) throw NumericError("auc: both classes must be present");

  std::vector<double> all = xs;
  all.insert(all.end(), ys.begin(), ys.end());
  const auto rall = midranks(all);
  const auto rx = midranks(xs);
  const auto ry = midranks(ys);

  DelongParts p;
  double rsum = 0.0;
  p.v10.resize(m);
  p.v01.resize(n);
  for (int i = 0; i < m; ++i) {
    rsum += rall[i];
    p.v10[i] = (rall[i] - rx[i]) / static_cast<double>(n);
  }
  for (int j = 0; j < n; ++j)
    p.v01[j] = 1.0 - (rall[m + j] - ry[j]) / static_cast<double>(m);
  p.auc = (rsum - 0.5 * m * (m + 1.0)) / (static_cast<double>(m) * n);
  return p;
}

double sample_var(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  if (n < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / (n - 1.0);
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const int n = static_cast<int>(a.size());
  if (n < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1.0);
}

}  // namespace

IccResult icc(const std::vector<std::vector<double>>& ratings) {
  const int n = static_cast<int>(ratings.size());
  if (n < 2) throw ArgumentError("icc: need at least two subjects");
  const int k = static_cast<int>(ratings[0].size());
  if (k < 2) throw ArgumentError("icc: need at least two raters");
  for (const auto& row : ratings) {
    if (static_cast<int>(row.size()) != k) throw ArgumentError("icc: ragged ratings");
    for (double v : row)
      if (!std::isfinite(v)) throw ArgumentError("icc: non-finite rating");
  }

  double grand = 0.0;
  for (const auto& row : ratings)
    for (double v : row) grand += v;
  grand /= static_cast<double>(n) * k;

  std::vector<double> rmean(n, 0.0), cmean(k, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      rmean[i] += ratings[i][j];
      cmean[j] += ratings[i][j];
    }
    rmean[i] /= k;
  }
  for (int j = 0; j < k; ++j) cmean[j] /= n;

  double ssr = 0.0, ssc = 0.0, sse = 0.0;
  for (int i = 0; i < n; ++i) ssr += (rmean[i] - grand) * (rmean[i] - grand);
  ssr *= k;
  for (int j = 0; j < k; ++j) ssc += (cmean[j] - grand) * (cmean[j] - grand);
  ssc *= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const double e = ratings[i][j] - rmean[i] - cmean[j] + grand;
      sse += e * e;
    }

  const double msr = ssr / (n - 1.0);
  const double msc = ssc / (k - 1.0);
  const double mse = sse / ((n - 1.0) * (k - 1.0));

  IccResult res;
  const double denom = msr + (k - 1.0) * mse + (static_cast<double>(k) / n) * (msc - mse);
  if (ssr <= 0.0 || denom <= 0.0) {
    res.degenerate = true;
    return res;  // no between-subject variance: coefficient pinned to 0
  }
  res.icc = (msr - mse) / denom;

  if (sse <= 0.0 && ssc <= 0.0) {
    // Perfect absolute agreement: the F machinery degenerates, the interval
    // collapses onto the point estimate.
    res.lo = res.hi = res.icc;
    return res;
  }

  // 95% CI via F quantiles with a Satterthwaite denominator df.
  const double r = res.icc;
  const double fj = msc / mse;
  const double a = k * r * fj + n * (1.0 + (k - 1.0) * r) - k * r;
  const double vn = (k - 1.0) * (n - 1.0) * a * a;
  const double vd = (n - 1.0) * k * k * r * r * fj * fj +
                    (n * (1.0 + (k - 1.0) * r) - k * r) * (n * (1.0 + (k - 1.0) * r) - k * r);
  const double v = std::max(1.0, vn / vd);
  const boost::math::fisher_f f_lo(n - 1.0, v);
  const boost::math::fisher_f f_hi(v, n - 1.0);
  const double fl = boost::math::quantile(f_lo, 0.975);
  const double fu = boost::math::quantile(f_hi, 0.975);
  res.lo = n * (msr - fl * mse) /
           (fl * (k * msc + (static_cast<double>(k) * n - k - n) * mse) + n * msr);
  res.hi = n * (fu * msr - mse) /
           (k * msc + (static_cast<double>(k) * n - k - n) * mse + n * fu * msr);
  res.lo = std::max(-1.0, std::min(res.lo, res.icc));
  res.hi = std::min(1.0, std::max(res.hi, res.icc));
  return res;
}

AucResult auc_delong(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auc: size mismatch");
  if (scores.empty()) throw ArgumentError("auc: empty input");
  const DelongParts p = delong_parts(scores, labels);
  AucResult res;
  res.auc = p.auc;
  res.n_pos = static_cast<int>(p.v10.size());
  res.n_neg = static_cast<int>(p.v01.size());
  res.var = sample_var(p.v10) / res.n_pos + sample_var(p.v01) / res.n_neg;
  const double half = z975() * std::sqrt(std::max(0.0, res.var));
  res.lo = std::max(0.0, res.auc - half);
  res.hi = std::min(1.0, res.auc + half);
  return res;
}

double delong_test(const std::vector<double>& scores_a,
                   const std::vector<double>& scores_b, const std::vector<int>& labels) {
  if (scores_a.size() != labels.size() || scores_b.size() != labels.size())
    throw ArgumentError("delong test: size mismatch");
  if (scores_a.empty()) throw ArgumentError("delong test: empty input");
  const DelongParts pa = delong_parts(scores_a, labels);
  const DelongParts pb = delong_parts(scores_b, labels);
  const double m = static_cast<double>(pa.v10.size());
  const double n = static_cast<double>(pa.v01.size());
  const double var = (sample_var(pa.v10) + sample_var(pb.v10) -
                      2.0 * sample_cov(pa.v10, pb.v10)) / m +
                     (sample_var(pa.v01) + sample_var(pb.v01) -
                      2.0 * sample_cov(pa.v01, pb.v01)) / n;
  const double diff = pa.auc - pb.auc;
  if (var <= 0.0) return diff == 0.0 ? 1.0 : 0.0;
  const double z = std::abs(diff) / std::sqrt(var);
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), z));
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw ArgumentError("accuracy: size mismatch");
  if (preds.empty()) throw ArgumentError("accuracy: empty input");
  long hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double weighted_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw ArgumentError("weighted f1: size mismatch");
  if (preds.empty()) throw ArgumentError("weighted f1: empty input");
  std::map<int, long> tp, fp, fn, support;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++support[labels[i]];
    if (preds[i] == labels[i]) {
      ++tp[labels[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  double f1 = 0.0;
  const double n = static_cast<double>(preds.size());
  for (const auto& [cls, sup] : support) {
    const double t = static_cast<double>(tp[cls]);
    const double prec_den = t + static_cast<double>(fp[cls]);
    const double rec_den = t + static_cast<double>(fn[cls]);
    const double prec = prec_den > 0.0 ? t / prec_den : 0.0;
    const double rec = rec_den > 0.0 ? t / rec_den : 0.0;
    const double cf1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    f1 += (static_cast<double>(sup) / n) * cf1;
  }
  return f1;
}

}  // namespace rsp
