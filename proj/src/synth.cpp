#include <algorithm>
#include <cmath>
#include <vector>

#include "rsp/pyramid.hpp"

namespace rsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Smooth scalar field in roughly [0,1]: sum of a few random plane waves.
struct SmoothField {
  struct Wave {
    double u, v, phase, amp;
  };
  std::vector<Wave> waves;
  double bias = 0.5;

  static SmoothField make(Rng& rng, int n_waves, double min_period, double max_period) {
    SmoothField f;
    for (int i = 0; i < n_waves; ++i) {
      const double period = rng.uniform(min_period, max_period);
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      Wave w;
      w.u = std::cos(ang) / period;
      w.v = std::sin(ang) / period;
      w.phase = rng.uniform(0.0, 2.0 * kPi);
      w.amp = 0.5 / n_waves;
      f.waves.push_back(w);
    }
    return f;
  }

  double operator()(double x, double y) const {
    double s = bias;
    for (const Wave& w : waves) s += w.amp * std::sin(2.0 * kPi * (w.u * x + w.v * y) + w.phase);
    return s;
  }
};

struct FloatImage {
  int h, w;
  std::vector<double> r, g, b;
  FloatImage(int h_, int w_) : h(h_), w(w_) {
    r.assign(static_cast<std::size_t>(h) * w, 0.0);
    g.assign(static_cast<std::size_t>(h) * w, 0.0);
    b.assign(static_cast<std::size_t>(h) * w, 0.0);
  }
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * w + x; }
};

void draw_ellipse(FloatImage& img, Image* mask, double cx, double cy, double rx, double ry,
                  double cr, double cg, double cb, double opacity) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      const std::size_t i = img.idx(y, x);
      img.r[i] = (1.0 - opacity) * img.r[i] + opacity * cr;
      img.g[i] = (1.0 - opacity) * img.g[i] + opacity * cg;
      img.b[i] = (1.0 - opacity) * img.b[i] + opacity * cb;
      if (mask) mask->at(y, x, 0) = 255;
    }
}

// Distinct base colors for classification textures.
const double kPalette[16][3] = {
    {225, 195, 215}, {200, 215, 235}, {235, 220, 185}, {205, 235, 205},
    {230, 200, 185}, {210, 190, 235}, {190, 230, 225}, {235, 205, 225},
    {215, 225, 190}, {195, 205, 220}, {230, 215, 205}, {205, 220, 230},
    {225, 230, 200}, {220, 195, 195}, {200, 225, 215}, {215, 210, 225}};

}  // namespace

float cellularity_in(const Image& cell_mask, int cx, int cy, int fp) {
  const int y0 = cy - fp / 2, x0 = cx - fp / 2;
  if (y0 < 0 || x0 < 0 || y0 + fp > cell_mask.h || x0 + fp > cell_mask.w)
    throw ArgumentError("cellularity_in: footprint out of bounds");
  long count = 0;
  for (int y = y0; y < y0 + fp; ++y)
    for (int x = x0; x < x0 + fp; ++x)
      if (cell_mask.at(y, x, 0) > 0) ++count;
  return static_cast<float>(static_cast<double>(count) / (static_cast<double>(fp) * fp));
}

int class_at(const Image& class_map, int cx, int cy) {
  if (cy < 0 || cx < 0 || cy >= class_map.h || cx >= class_map.w)
    throw ArgumentError("class_at: center out of bounds");
  return class_map.at(cy, cx, 0);
}

SynthPyramid gen_pyramid(std::uint64_t seed, const GenParams& params, bool allow_small) {
  if (params.levels < 3) throw ConfigError("gen_pyramid: need at least 3 levels");
  const int min_size = allow_small ? 64 : 256;
  if (params.size < min_size)
    throw ConfigError("gen_pyramid: level-0 size below minimum " + std::to_string(min_size));
  if (params.n_classes < 1 || params.n_classes > 16)
    throw ConfigError("gen_pyramid: n_classes must be in 1..16");
  if (params.region < 8 || params.size % params.region != 0)
    throw ConfigError("gen_pyramid: region must be >= 8 and divide size");

  const int S = params.size;
  Rng rng = Rng::derive(seed, "synth-pyramid");

  const SmoothField tissue_field = SmoothField::make(rng, 5, S / 4.0, S / 1.5);
  const SmoothField density_field = SmoothField::make(rng, 5, S / 6.0, S / 2.0);
  const SmoothField mod_field = SmoothField::make(rng, 4, S / 8.0, S / 2.0);

  // Background mask from an exact quantile of the tissue field.
  Image tissue0(S, S, 1, 255);
  if (params.bg_frac > 0.0) {
    std::vector<double> vals(static_cast<std::size_t>(S) * S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) vals[static_cast<std::size_t>(y) * S + x] = tissue_field(x, y);
    std::vector<double> sorted = vals;
    const std::size_t k = static_cast<std::size_t>(
        std::min<double>(sorted.size() - 1.0, std::lround(params.bg_frac * sorted.size())));
    std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
    const double thresh = sorted[k];
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (vals[i] < thresh) tissue0.px[i] = 0;
  }

  // Class map: one class per region cell, drawn uniformly.
  SynthLabelMap labels;
  labels.region = params.region;
  labels.gh = S / params.region;
  labels.gw = S / params.region;
  labels.class_id.resize(static_cast<std::size_t>(labels.gh) * labels.gw, 0);
  Image class_map(S, S, 1, 0);
  if (params.mode == TaskMode::classification) {
    for (int gy = 0; gy < labels.gh; ++gy)
      for (int gx = 0; gx < labels.gw; ++gx) {
        const int cls = rng.uniform_index(params.n_classes);
        labels.class_id[static_cast<std::size_t>(gy) * labels.gw + gx] = cls;
        for (int y = gy * params.region; y < (gy + 1) * params.region; ++y)
          for (int x = gx * params.region; x < (gx + 1) * params.region; ++x)
            class_map.at(y, x, 0) = static_cast<std::uint8_t>(cls);
      }
  }

  // Base tissue color with smooth modulation; per-class stripes on top.
  FloatImage img(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const std::size_t i = img.idx(y, x);
      const double m = params.mod_amp * (mod_field(x, y) - 0.5) * 2.0;
      double cr = 231, cg = 205, cb = 216;
      if (params.mode == TaskMode::classification) {
        const int cls = class_map.at(y, x, 0);
        cr = kPalette[cls][0];
        cg = kPalette[cls][1];
        cb = kPalette[cls][2];
        const double ang = cls * kPi / std::max(1, params.n_classes);
        const double period = 6.0 + 2.5 * cls;
        const double stripe =
            params.tex_amp * std::sin(2.0 * kPi * (x * std::cos(ang) + y * std::sin(ang)) / period);
        cr -= stripe;
        cg -= stripe;
        cb -= stripe;
      }
      img.r[i] = cr + m;
      img.g[i] = cg + m;
      img.b[i] = cb + m;
    }

  // Pale wisps: visual clutter that never counts toward cellularity.
  for (int d = 0; d < params.distractors; ++d) {
    const double cx = rng.uniform(0.0, S - 1.0), cy = rng.uniform(0.0, S - 1.0);
    const double rx = rng.uniform(6.0, 20.0), ry = rng.uniform(6.0, 20.0);
    draw_ellipse(img, nullptr, cx, cy, rx, ry, 238, 190, 212, 0.35);
  }

  // Nuclei: dark ellipses accepted by the local density field.
  Image cell_mask(S, S, 1, 0);
  if (params.mode == TaskMode::regression && params.density_max > 0.0) {
    const double rbar = 0.5 * (params.cell_rmin + params.cell_rmax);
    int candidates = params.cell_candidates;
    if (candidates < 0)
      candidates = static_cast<int>(static_cast<double>(S) * S * params.density_max /
                                    (kPi * rbar * rbar));
    for (int n = 0; n < candidates; ++n) {
      const double cx = rng.uniform(0.0, S - 1.0), cy = rng.uniform(0.0, S - 1.0);
      const double accept = rng.uniform();
      const double rx = rng.uniform(params.cell_rmin, params.cell_rmax);
      const double ry = rng.uniform(params.cell_rmin, params.cell_rmax);
      const double jit = rng.uniform(-18.0, 18.0);
      if (accept > density_field(cx, cy)) continue;
      if (tissue0.at(static_cast<int>(cy), static_cast<int>(cx), 0) == 0) continue;
      draw_ellipse(img, &cell_mask, cx, cy, rx, ry, 88 + jit, 58 + 0.5 * jit, 132 + jit, 1.0);
    }
  }

  // Background wash and additive noise, then quantize.
  Image level0(S, S, 3);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const std::size_t i = img.idx(y, x);
      double cr = img.r[i], cg = img.g[i], cb = img.b[i];
      if (tissue0.px[i] == 0) {
        cr = 246;
        cg = 245;
        cb = 247;
      }
      if (params.noise_sigma > 0.0) {
        cr += rng.normal(0.0, params.noise_sigma);
        cg += rng.normal(0.0, params.noise_sigma);
        cb += rng.normal(0.0, params.noise_sigma);
      }
      level0.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(std::lround(cr), 0l, 255l));
      level0.at(y, x, 1) = static_cast<std::uint8_t>(std::clamp(std::lround(cg), 0l, 255l));
      level0.at(y, x, 2) = static_cast<std::uint8_t>(std::clamp(std::lround(cb), 0l, 255l));
    }

  // Region labels by exact pixel counting on the rendered mask.
  labels.cellularity.resize(labels.class_id.size(), 0.0f);
  for (int gy = 0; gy < labels.gh; ++gy)
    for (int gx = 0; gx < labels.gw; ++gx) {
      long count = 0;
      for (int y = gy * params.region; y < (gy + 1) * params.region; ++y)
        for (int x = gx * params.region; x < (gx + 1) * params.region; ++x)
          if (cell_mask.at(y, x, 0) > 0) ++count;
      labels.cellularity[static_cast<std::size_t>(gy) * labels.gw + gx] = static_cast<float>(
          static_cast<double>(count) / (static_cast<double>(params.region) * params.region));
    }

  SynthPyramid out;
  out.pyr = build_pyramid(std::move(level0), std::move(tissue0), params.levels);
  out.labels = std::move(labels);
  out.cell_mask = std::move(cell_mask);
  out.class_map = std::move(class_map);
  return out;
}

}  // namespace rsp
