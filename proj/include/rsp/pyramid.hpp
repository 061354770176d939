#pragma once

#include <string>
#include <vector>

#include "rsp/image.hpp"
#include "rsp/rng.hpp"

namespace rsp {

// Multi-level image standing in for a whole-slide scan. Level 0 is the
// highest magnification; each level halves the resolution of the previous
// one (2x2 mean pooling on the quantized pixels).
struct PyramidImage {
  std::vector<Image> levels;
  std::vector<double> downsample;  // scale relative to level 0; downsample[0] == 1
  double microns_per_pixel_level0 = 0.25;
  std::vector<Image> tissue;  // optional per-level masks, 255 = tissue, 0 = background

  int num_levels() const { return static_cast<int>(levels.size()); }
  bool has_tissue_mask() const { return !tissue.empty(); }
};

// Builds the level chain from a level-0 raster (and optional level-0 tissue
// mask, downsampled by majority vote).
PyramidImage build_pyramid(Image level0, int n_levels, double mpp = 0.25);
PyramidImage build_pyramid(Image level0, Image tissue0, int n_levels, double mpp = 0.25);

// Largest per-channel deviation (in 1/255 units) between downsample2x2 of
// level l and stored level l+1, maximized over all level pairs.
int meanpool_max_error(const PyramidImage& p);

// One image file per level plus a metadata sidecar ("<stem>-meta.txt") with
// the downsample factors; tissue masks saved alongside when present.
void save_pyramid(const std::string& dir, const std::string& stem, const PyramidImage& p);
PyramidImage load_pyramid(const std::string& dir, const std::string& stem);

// ---- synthetic generator ----

enum class TaskMode { regression, classification };

struct GenParams {
  int size = 512;    // level-0 height = width
  int levels = 3;
  TaskMode mode = TaskMode::regression;
  int n_classes = 4;
  int region = 64;          // label-map granularity at level 0
  double bg_frac = 0.2;     // fraction of level-0 pixels marked background
  double cell_rmin = 2.0;   // nucleus radii in level-0 pixels
  double cell_rmax = 5.0;
  double density_max = 0.5; // peak local acceptance rate for nucleus placement
  int cell_candidates = -1; // -1: derived from size
  int distractors = 24;     // non-counting pale wisps
  double noise_sigma = 5.0; // per-pixel additive noise, 0..255 scale
  double mod_amp = 8.0;     // amplitude of the smooth base-color modulation
  double tex_amp = 22.0;    // stripe contrast for classification textures
};

struct SynthLabelMap {
  int region = 64;
  int gh = 0, gw = 0;                // region grid shape
  std::vector<int> class_id;         // per region
  std::vector<float> cellularity;    // per region, exact mask fraction
};

struct SynthPyramid {
  PyramidImage pyr;
  SynthLabelMap labels;
  Image cell_mask;   // level-0, 255 where a nucleus was rendered
  Image class_map;   // level-0, pixel value = class id (classification mode)
};

// Deterministic given (seed, params). Throws ConfigError on levels < 3 or
// size < 256 unless params.size was explicitly reduced for tests via
// allow_small.
SynthPyramid gen_pyramid(std::uint64_t seed, const GenParams& params, bool allow_small = false);

// Exact labels for a square footprint of side fp centered at (cx, cy) in
// level-0 coordinates: blob-pixel fraction, and the class id at the center.
float cellularity_in(const Image& cell_mask, int cx, int cy, int fp);
int class_at(const Image& class_map, int cx, int cy);

}  // namespace rsp
