#pragma once

#include <cstdint>
#include <vector>

#include "rsp/common.hpp"

namespace rsp {

// One patch-level tumor probability at a level-0 patch center.
struct PatchPred {
  int cx = 0, cy = 0;
  double prob = 0.0;
};

// Regular-grid probability map. Cell (gx, gy) covers the patch centered at
// level-0 coordinate (x0 + gx*stride, y0 + gy*stride); the mapping is
// bijective on the grid. Cells nothing was written to stay uncovered.
struct Heatmap {
  int gw = 0, gh = 0;
  int stride = 0;
  int x0 = 0, y0 = 0;
  std::vector<double> prob;            // gw*gh row-major, in [0,1]
  std::vector<std::uint8_t> covered;   // 1 = written
  int duplicate_writes = 0;            // last writer won, occurrences counted

  double at(int gx, int gy) const { return prob[static_cast<std::size_t>(gy) * gw + gx]; }
  bool is_covered(int gx, int gy) const {
    return covered[static_cast<std::size_t>(gy) * gw + gx] != 0;
  }
  // Grid cell -> level-0 center coordinate.
  int cell_x(int gx) const { return x0 + gx * stride; }
  int cell_y(int gy) const { return y0 + gy * stride; }
};

// Builds the grid spanned by the prediction coordinates. Coordinates must
// lie inside the slide and on a common stride grid; duplicate coordinates
// overwrite (last writer wins) and are counted.
Heatmap build_heatmap(const std::vector<PatchPred>& preds, int stride, int slide_w,
                      int slide_h);

// Fixed default feature set over covered cells:
//   0 max probability
//   1 mean probability
//   2 fraction of cells >= 0.5
//   3 fraction of cells >= 0.9
//   4 area (cell count) of the largest 4-connected component >= 0.5
//   5 number of 4-connected components >= 0.5
//   6 mean probability within the largest component
std::vector<double> slide_features(const Heatmap& h);
inline constexpr int kSlideFeatures = 7;

struct SvmConfig {
  double c = 1.0;     // hinge weight; L2 penalty is 1/(2c)
  double lr = 0.05;
  int epochs = 500;
};

struct LinearSvm {
  std::vector<double> w;
  double b = 0.0;
};

// Full-batch subgradient descent on the primal hinge + L2 objective.
// Labels are 0/1. Deterministic for fixed inputs.
LinearSvm train_slide_classifier(const std::vector<std::vector<double>>& xs,
                                 const std::vector<int>& ys, const SvmConfig& cfg);

// Margin squashed through a logistic, so the output reads as a probability.
double predict_slide(const LinearSvm& m, const std::vector<double>& x);

}  // namespace rsp
