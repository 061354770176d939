#include "rsp/slide.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>

namespace rsp {

Heatmap build_heatmap(const std::vector<PatchPred>& preds, int stride, int slide_w,
                      int slide_h) {
  if (stride <= 0) throw ArgumentError("heatmap: stride must be positive");
  if (preds.empty()) throw ArgumentError("heatmap: no predictions");
  int min_x = preds[0].cx, max_x = preds[0].cx;
  int min_y = preds[0].cy, max_y = preds[0].cy;
  for (const auto& p : preds) {
    if (p.cx < 0 || p.cx >= slide_w || p.cy < 0 || p.cy >= slide_h)
      throw ArgumentError("heatmap: coordinate outside the slide");
    if (!(p.prob >= 0.0 && p.prob <= 1.0))
      throw ArgumentError("heatmap: probability outside [0,1]");
    min_x = std::min(min_x, p.cx);
    max_x = std::max(max_x, p.cx);
    min_y = std::min(min_y, p.cy);
    max_y = std::max(max_y, p.cy);
  }

  Heatmap h;
  h.stride = stride;
  h.x0 = min_x;
  h.y0 = min_y;
  h.gw = (max_x - min_x) / stride + 1;
  h.gh = (max_y - min_y) / stride + 1;
  h.prob.assign(static_cast<std::size_t>(h.gw) * h.gh, 0.0);
  h.covered.assign(h.prob.size(), 0);

  for (const auto& p : preds) {
    if ((p.cx - min_x) % stride != 0 || (p.cy - min_y) % stride != 0)
      throw ArgumentError("heatmap: coordinate off the stride grid");
    const int gx = (p.cx - min_x) / stride;
    const int gy = (p.cy - min_y) / stride;
    const std::size_t cell = static_cast<std::size_t>(gy) * h.gw + gx;
    if (h.covered[cell]) ++h.duplicate_writes;
    h.prob[cell] = p.prob;  // last writer wins
    h.covered[cell] = 1;
  }
  if (h.duplicate_writes > 0)
    std::fprintf(stderr, "heatmap: %d duplicate coordinate(s), last value kept\n",
                 h.duplicate_writes);
  return h;
}

std::vector<double> slide_features(const Heatmap& h) {
  if (h.gw <= 0 || h.gh <= 0 || h.prob.empty())
    throw NumericError("slide features: empty heatmap");
  long n_cov = 0;
  double maxp = 0.0, sum = 0.0;
  long ge5 = 0, ge9 = 0;
  for (std::size_t i = 0; i < h.prob.size(); ++i) {
    if (!h.covered[i]) continue;
    ++n_cov;
    maxp = std::max(maxp, h.prob[i]);
    sum += h.prob[i];
    if (h.prob[i] >= 0.5) ++ge5;
    if (h.prob[i] >= 0.9) ++ge9;
  }
  if (n_cov == 0) throw NumericError("slide features: no covered cells");

  // 4-connected components over covered cells with prob >= 0.5.
  std::vector<int> comp(h.prob.size(), -1);
  int n_comp = 0;
  long best_area = 0;
  double best_mean = 0.0;
  for (int gy = 0; gy < h.gh; ++gy) {
    for (int gx = 0; gx < h.gw; ++gx) {
      const std::size_t s = static_cast<std::size_t>(gy) * h.gw + gx;
      if (!h.covered[s] || h.prob[s] < 0.5 || comp[s] >= 0) continue;
      long area = 0;
      double csum = 0.0;
      std::queue<std::pair<int, int>> q;
      q.push({gx, gy});
      comp[s] = n_comp;
      while (!q.empty()) {
        const auto [x, y] = q.front();
        q.pop();
        const std::size_t c = static_cast<std::size_t>(y) * h.gw + x;
        ++area;
        csum += h.prob[c];
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          const int nx = x + dx[d], ny = y + dy[d];
          if (nx < 0 || nx >= h.gw || ny < 0 || ny >= h.gh) continue;
          const std::size_t nc = static_cast<std::size_t>(ny) * h.gw + nx;
          if (!h.covered[nc] || h.prob[nc] < 0.5 || comp[nc] >= 0) continue;
          comp[nc] = n_comp;
          q.push({nx, ny});
        }
      }
      if (area > best_area) {
        best_area = area;
        best_mean = csum / static_cast<double>(area);
      }
      ++n_comp;
    }
  }

  return {maxp,
          sum / static_cast<double>(n_cov),
          static_cast<double>(ge5) / static_cast<double>(n_cov),
          static_cast<double>(ge9) / static_cast<double>(n_cov),
          static_cast<double>(best_area),
          static_cast<double>(n_comp),
          best_mean};
}

LinearSvm train_slide_classifier(const std::vector<std::vector<double>>& xs,
                                 const std::vector<int>& ys, const SvmConfig& cfg) {
  if (xs.empty() || xs.size() != ys.size())
    throw ArgumentError("slide classifier: bad training set");
  if (cfg.c <= 0.0 || cfg.lr <= 0.0 || cfg.epochs <= 0)
    throw ConfigError("slide classifier: c, lr and epochs must be positive");
  const int d = static_cast<int>(xs[0].size());
  const int n = static_cast<int>(xs.size());
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(xs[i].size()) != d)
      throw ArgumentError("slide classifier: ragged features");
    if (ys[i] != 0 && ys[i] != 1)
      throw ArgumentError("slide classifier: labels must be 0/1");
  }

  LinearSvm m;
  m.w.assign(d, 0.0);
  const double lambda = 1.0 / (2.0 * cfg.c);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = ys[i] == 1 ? 1.0 : -1.0;
      double margin = m.b;
      for (int j = 0; j < d; ++j) margin += m.w[j] * xs[i][j];
      if (y * margin < 1.0) {
        for (int j = 0; j < d; ++j) gw[j] -= y * xs[i][j];
        gb -= y;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int j = 0; j < d; ++j)
      m.w[j] -= cfg.lr * (gw[j] * inv_n + 2.0 * lambda * m.w[j]);
    m.b -= cfg.lr * gb * inv_n;
  }
  return m;
}

double predict_slide(const LinearSvm& m, const std::vector<double>& x) {
  if (x.size() != m.w.size()) throw ArgumentError("slide predict: feature size mismatch");
  double margin = m.b;
  for (std::size_t j = 0; j < x.size(); ++j) margin += m.w[j] * x[j];
  return 1.0 / (1.0 + std::exp(-margin));
}

}  // namespace rsp
