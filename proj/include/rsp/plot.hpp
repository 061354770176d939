#pragma once

#include <string>
#include <vector>

#include "rsp/slide.hpp"
#include "rsp/train.hpp"

namespace rsp {

// Render a metrics log as stacked learning-curve panels, one panel per
// metric with a polyline per split. Deterministic output: series are drawn
// in sorted order and values printed with fixed precision.
std::string curves_svg(const std::vector<MetricRecord>& recs, const std::string& title);

// Convenience wrapper: parse the log at `metrics_path` and write the SVG.
void write_curves_svg(const std::string& metrics_path, const std::string& out_path);

// Write a heatmap as image files plus a geometry sidecar:
//   <base>.pgm       probability grid, 0..255 grayscale, uncovered cells 0
//   <base>.mask.pgm  coverage mask, 255 where a tile was written
//   <base>.json      origin, stride, grid size, coverage and duplicate counts
void export_heatmap(const Heatmap& h, const std::string& base);

}  // namespace rsp
