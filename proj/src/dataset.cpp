#include "rsp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rsp {

const std::vector<std::array<int, 3>>& enumerate_permutations() {
  static const std::vector<std::array<int, 3>> perms = {
      {1, 2, 3}, {1, 3, 2}, {2, 1, 3}, {2, 3, 1}, {3, 1, 2}, {3, 2, 1}};
  return perms;
}

static const Image& slot(const PatchTuple& t, int s) {
  switch (s) {
    case 1: return t.S1;
    case 2: return t.S2;
    default: return t.S3;
  }
}

PermutedSequence permute_tuple(const PatchTuple& t, int label) {
  if (label < 0 || label > 5) throw ArgumentError("permute_tuple: label must be in 0..5");
  const auto& perm = enumerate_permutations()[label];
  PermutedSequence out;
  out.label = label;
  out.perm = perm;
  for (int i = 0; i < 3; ++i) out.patches[i] = slot(t, perm[i]);
  return out;
}

PatchTuple invert_permutation(const PermutedSequence& s) {
  PatchTuple t;
  for (int i = 0; i < 3; ++i) {
    const int src = s.perm[i];  // patches[i] came from slot src
    switch (src) {
      case 1: t.S1 = s.patches[i]; break;
      case 2: t.S2 = s.patches[i]; break;
      default: t.S3 = s.patches[i]; break;
    }
  }
  return t;
}

Image extract_patch(const PyramidImage& p, int cx, int cy, int patch_size, int level) {
  if (level < 0 || level >= p.num_levels()) throw ArgumentError("extract_patch: bad level");
  const int ds = static_cast<int>(p.downsample[level]);
  const int clx = cx / ds, cly = cy / ds;
  const int x0 = clx - patch_size / 2, y0 = cly - patch_size / 2;
  const Image& lv = p.levels[level];
  if (x0 < 0 || y0 < 0 || x0 + patch_size > lv.w || y0 + patch_size > lv.h)
    throw SamplingError("extract_patch: footprint exceeds image bounds");
  return crop(lv, y0, x0, patch_size, patch_size);
}

static double background_frac(const PyramidImage& p, int cx, int cy, int patch_size) {
  if (!p.has_tissue_mask()) return 0.0;
  const Image& m = p.tissue[0];
  const int x0 = cx - patch_size / 2, y0 = cy - patch_size / 2;
  if (x0 < 0 || y0 < 0 || x0 + patch_size > m.w || y0 + patch_size > m.h) return 1.0;
  long bg = 0;
  for (int y = y0; y < y0 + patch_size; ++y)
    for (int x = x0; x < x0 + patch_size; ++x)
      if (m.at(y, x, 0) == 0) ++bg;
  return static_cast<double>(bg) / (static_cast<double>(patch_size) * patch_size);
}

PatchTuple sample_concentric_tuple(const PyramidImage& p, Rng& rng, int patch_size,
                                   std::array<int, 3> level_triple, int max_tries) {
  if (level_triple[0] == level_triple[1] || level_triple[0] == level_triple[2] ||
      level_triple[1] == level_triple[2])
    throw ArgumentError("sample_concentric_tuple: levels must be distinct");
  for (int l : level_triple)
    if (l < 0 || l >= p.num_levels())
      throw ArgumentError("sample_concentric_tuple: level out of range");
  const int lc = std::max({level_triple[0], level_triple[1], level_triple[2]});
  const int dsc = static_cast<int>(p.downsample[lc]);
  const Image& coarse = p.levels[lc];
  const int half = patch_size / 2;
  if (coarse.w < patch_size || coarse.h < patch_size)
    throw SamplingError("sample_concentric_tuple: footprint exceeds the coarsest level");

  for (int attempt = 0; attempt < max_tries; ++attempt) {
    // Center chosen on the coarsest grid so every finer center is exact.
    const int ccx = half + rng.uniform_index(coarse.w - patch_size + 1);
    const int ccy = half + rng.uniform_index(coarse.h - patch_size + 1);
    const int cx = ccx * dsc, cy = ccy * dsc;
    if (background_frac(p, cx, cy, patch_size) > 0.90) continue;
    PatchTuple t;
    t.cx = cx;
    t.cy = cy;
    t.S1 = extract_patch(p, cx, cy, patch_size, level_triple[0]);
    t.S2 = extract_patch(p, cx, cy, patch_size, level_triple[1]);
    t.S3 = extract_patch(p, cx, cy, patch_size, level_triple[2]);
    t.levels = level_triple;
    for (int i = 0; i < 3; ++i) t.mags[i] = p.downsample[level_triple[i]];
    return t;
  }
  throw SamplingError("sample_concentric_tuple: no tissue center found after " +
                      std::to_string(max_tries) + " tries");
}

int alpha_index(double alpha) {
  for (std::size_t i = 0; i < kAlphas.size(); ++i)
    if (std::abs(alpha - kAlphas[i]) < 1e-9) return static_cast<int>(i);
  throw ArgumentError("alpha must be one of 0.10, 0.25, 0.50, 1.00");
}

DatasetSplit make_splits(int n_pool, double alpha, std::uint64_t seed) {
  alpha_index(alpha);
  if (n_pool <= 0) throw ConfigError("make_splits: empty pool");
  std::vector<int> order(n_pool);
  for (int i = 0; i < n_pool; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);
  DatasetSplit s;
  s.alpha = alpha;
  s.seed = seed;
  const int n_labeled = static_cast<int>(std::lround(alpha * n_pool));
  s.labeled.assign(order.begin(), order.begin() + std::min(n_labeled, n_pool));
  s.unlabeled = order;
  return s;
}

void write_manifest(const std::string& path, const std::vector<ExampleRec>& recs) {
  std::ofstream f(path);
  if (!f) throw IoError("write_manifest: cannot open " + path);
  f << std::setprecision(9);
  for (const auto& r : recs)
    f << r.id << " " << r.split << " " << r.alpha_mask << " " << r.class_id << " "
      << r.cellularity << " " << r.pyramid << " " << r.cx << " " << r.cy << " " << r.level
      << "\n";
}

std::vector<ExampleRec> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_manifest: cannot open " + path);
  std::vector<ExampleRec> recs;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ExampleRec r;
    if (!(ss >> r.id >> r.split >> r.alpha_mask >> r.class_id >> r.cellularity >> r.pyramid >>
          r.cx >> r.cy >> r.level))
      throw IoError("read_manifest: malformed line: " + line);
    recs.push_back(r);
  }
  return recs;
}

const SynthPyramid& SynthDataset::pyramid_of(const ExampleRec& r) const {
  const std::vector<SynthPyramid>* group = nullptr;
  if (r.split == "pretrain")
    group = &pretrain_pyramids;
  else if (r.split == "test")
    group = &test_pyramids;
  else
    group = &finetune_pyramids;
  if (r.pyramid < 0 || r.pyramid >= static_cast<int>(group->size()))
    throw ArgumentError("pyramid_of: bad pyramid index");
  return (*group)[r.pyramid];
}

Image SynthDataset::patch_of(const ExampleRec& r, int patch_size) const {
  return extract_patch(pyramid_of(r).pyr, r.cx, r.cy, patch_size, r.level);
}

static std::vector<ExampleRec> draw_examples(const std::vector<SynthPyramid>& pyrs, Rng& rng,
                                             const SynthDataConfig& cfg, int per_pyramid,
                                             const std::string& split, int& next_id) {
  std::vector<ExampleRec> out;
  const int P = cfg.patch_size, lvl = cfg.patch_level;
  for (std::size_t pi = 0; pi < pyrs.size(); ++pi) {
    const SynthPyramid& sp = pyrs[pi];
    const int ds = static_cast<int>(sp.pyr.downsample[lvl]);
    const Image& at_level = sp.pyr.levels[lvl];
    const int half = P / 2;
    const int fp = P * ds;  // level-0 footprint side
    for (int e = 0; e < per_pyramid; ++e) {
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        const int clx = half + rng.uniform_index(at_level.w - P + 1);
        const int cly = half + rng.uniform_index(at_level.h - P + 1);
        const int cx = clx * ds, cy = cly * ds;
        if (cx - fp / 2 < 0 || cy - fp / 2 < 0 || cx + fp / 2 > sp.pyr.levels[0].w ||
            cy + fp / 2 > sp.pyr.levels[0].h)
          continue;
        if (background_frac(sp.pyr, cx, cy, fp) > 0.90) continue;
        ExampleRec r;
        r.id = next_id++;
        r.pyramid = static_cast<int>(pi);
        r.cx = cx;
        r.cy = cy;
        r.level = lvl;
        r.cellularity = cellularity_in(sp.cell_mask, cx, cy, fp);
        r.class_id = class_at(sp.class_map, cx, cy);
        r.split = split;
        out.push_back(r);
        placed = true;
      }
      if (!placed)
        throw SamplingError("build_synth_dataset: could not place a tissue example");
    }
  }
  return out;
}

SynthDataset build_synth_dataset(std::uint64_t seed, const SynthDataConfig& cfg) {
  if (cfg.finetune_pyramids <= 0 || cfg.examples_per_pyramid <= 0)
    throw ConfigError("build_synth_dataset: need a non-empty fine-tune pool");
  SynthDataset ds;
  ds.params = cfg.gen;
  Rng seeder = Rng::derive(seed, "synth-seeds");
  for (int i = 0; i < cfg.pretrain_pyramids; ++i)
    ds.pretrain_pyramids.push_back(gen_pyramid(seeder.next_u64(), cfg.gen, cfg.allow_small));
  for (int i = 0; i < cfg.finetune_pyramids; ++i)
    ds.finetune_pyramids.push_back(gen_pyramid(seeder.next_u64(), cfg.gen, cfg.allow_small));
  for (int i = 0; i < cfg.test_pyramids; ++i)
    ds.test_pyramids.push_back(gen_pyramid(seeder.next_u64(), cfg.gen, cfg.allow_small));

  int next_id = 0;
  Rng ex_rng = Rng::derive(seed, "examples");
  std::vector<ExampleRec> all =
      draw_examples(ds.finetune_pyramids, ex_rng, cfg, cfg.examples_per_pyramid, "pool", next_id);

  // Carve the validation slice, then mark alpha membership on the rest.
  std::vector<int> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng vs = Rng::derive(seed, "valsplit");
  vs.shuffle(order);
  const int n_val = static_cast<int>(std::lround(cfg.val_frac * static_cast<double>(all.size())));
  for (int i = 0; i < n_val; ++i) all[order[i]].split = "val";
  for (const auto& r : all)
    (r.split == "val" ? ds.val : ds.pool).push_back(r);

  const int n_pool = static_cast<int>(ds.pool.size());
  for (std::size_t ai = 0; ai < kAlphas.size(); ++ai) {
    DatasetSplit s = make_splits(n_pool, kAlphas[ai], seed);
    for (int idx : s.labeled) ds.pool[idx].alpha_mask |= (1 << ai);
  }
  ds.test = draw_examples(ds.test_pyramids, ex_rng, cfg, cfg.test_per_pyramid, "test", next_id);
  return ds;
}

}  // namespace rsp
