#include "rsp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "rsp/common.hpp"

namespace rsp {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kPaletteSize = 6;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write to " + path);
}

struct Series {
  std::vector<std::pair<int, double>> pts;  // (epoch, value)
};

}  // namespace

std::string curves_svg(const std::vector<MetricRecord>& recs, const std::string& title) {
  if (recs.empty()) throw ArgumentError("plot: metrics log has no records");

  // metric -> split -> points. std::map keeps panel and legend order stable.
  std::map<std::string, std::map<std::string, Series>> panels;
  for (const auto& r : recs) panels[r.metric][r.split].pts.push_back({r.epoch, r.value});
  for (auto& [metric, splits] : panels)
    for (auto& [split, s] : splits)
      std::sort(s.pts.begin(), s.pts.end());

  const int pw = 640, ph = 170;                 // panel cell
  const int ml = 64, mr = 16, mt = 26, mb = 24; // margins inside a panel
  const int iw = pw - ml - mr, ih = ph - mt - mb;
  const int width = pw;
  const int height = 28 + static_cast<int>(panels.size()) * ph;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"monospace\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"8\" y=\"18\" font-size=\"13\">" << title << "</text>\n";

  int panel_i = 0;
  for (const auto& [metric, splits] : panels) {
    const int oy = 28 + panel_i * ph;
    double lo = 0, hi = 0;
    int e_lo = 0, e_hi = 0;
    bool first = true;
    for (const auto& [split, s] : splits)
      for (const auto& [e, v] : s.pts) {
        if (!std::isfinite(v)) continue;
        if (first) { lo = hi = v; e_lo = e_hi = e; first = false; }
        lo = std::min(lo, v); hi = std::max(hi, v);
        e_lo = std::min(e_lo, e); e_hi = std::max(e_hi, e);
      }
    if (first) { lo = 0; hi = 1; }        // all values non-finite
    if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
    const double e_span = std::max(1, e_hi - e_lo);

    svg << "<text x=\"" << ml << "\" y=\"" << oy + 14 << "\">" << metric << "</text>\n";
    svg << "<rect x=\"" << ml << "\" y=\"" << oy + mt << "\" width=\"" << iw << "\" height=\""
        << ih << "\" fill=\"none\" stroke=\"#ccc\"/>\n";
    svg << "<text x=\"4\" y=\"" << oy + mt + 10 << "\" fill=\"#555\">" << fmt(hi) << "</text>\n";
    svg << "<text x=\"4\" y=\"" << oy + mt + ih << "\" fill=\"#555\">" << fmt(lo) << "</text>\n";
    svg << "<text x=\"" << ml << "\" y=\"" << oy + ph - 6 << "\" fill=\"#555\">" << e_lo
        << "</text>\n";
    svg << "<text x=\"" << ml + iw - 24 << "\" y=\"" << oy + ph - 6 << "\" fill=\"#555\">" << e_hi
        << "</text>\n";

    int color_i = 0, legend_x = ml + 60;
    for (const auto& [split, s] : splits) {
      const char* color = kPalette[color_i % kPaletteSize];
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [e, v] : s.pts) {
        if (!std::isfinite(v)) continue;
        const double x = ml + (e - e_lo) / e_span * iw;
        const double y = oy + mt + (1.0 - (v - lo) / (hi - lo)) * ih;
        svg << fmt(x) << "," << fmt(y) << " ";
      }
      svg << "\"/>\n";
      svg << "<text x=\"" << legend_x << "\" y=\"" << oy + 14 << "\" fill=\"" << color << "\">"
          << split << "</text>\n";
      legend_x += 12 * static_cast<int>(split.size()) + 16;
      ++color_i;
    }
    ++panel_i;
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_curves_svg(const std::string& metrics_path, const std::string& out_path) {
  const auto recs = read_metrics(metrics_path);
  if (recs.empty()) throw ArgumentError("plot: " + metrics_path + " has no records");
  write_text(out_path, curves_svg(recs, recs.front().run_id));
}

void export_heatmap(const Heatmap& h, const std::string& base) {
  if (h.gw <= 0 || h.gh <= 0) throw ArgumentError("plot: empty heatmap");
  const std::size_t n = static_cast<std::size_t>(h.gw) * h.gh;

  std::string prob(n, '\0'), mask(n, '\0');
  int covered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (h.covered[i]) {
      prob[i] = static_cast<char>(std::lround(h.prob[i] * 255.0));
      mask[i] = static_cast<char>(255);
      ++covered;
    }
  }
  const std::string hdr =
      "P5\n" + std::to_string(h.gw) + " " + std::to_string(h.gh) + "\n255\n";
  write_text(base + ".pgm", hdr + prob);
  write_text(base + ".mask.pgm", hdr + mask);

  nlohmann::json j;
  j["x0"] = h.x0;
  j["y0"] = h.y0;
  j["stride"] = h.stride;
  j["gw"] = h.gw;
  j["gh"] = h.gh;
  j["covered"] = covered;
  j["duplicate_writes"] = h.duplicate_writes;
  write_text(base + ".json", j.dump(2) + "\n");
}

}  // namespace rsp
