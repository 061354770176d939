#pragma once

#include <array>
#include <string>
#include <vector>

#include "rsp/pyramid.hpp"

namespace rsp {

// Three concentric patches of identical pixel size sharing one level-0
// center. Ordered high -> low resolution by physical detail: S3 is the
// highest-magnification (finest) patch, S1 the lowest.
struct PatchTuple {
  Image S1, S2, S3;
  int cx = 0, cy = 0;              // level-0 center
  std::array<int, 3> levels{};     // pyramid level of S1, S2, S3
  std::array<double, 3> mags{};    // downsample factor of S1, S2, S3
};

struct PermutedSequence {
  std::array<Image, 3> patches;
  int label = 0;                   // index into enumerate_permutations()
  std::array<int, 3> perm{};       // patches[i] = source slot perm[i] (1-based)
};

// The 6 permutations of (1,2,3) in lexicographic order; index = canonical label.
const std::vector<std::array<int, 3>>& enumerate_permutations();

PermutedSequence permute_tuple(const PatchTuple& t, int label);
PatchTuple invert_permutation(const PermutedSequence& s);

// Samples one concentric tuple. level_triple lists three distinct levels in
// coarse->fine order for (S1,S2,S3), e.g. {2,1,0}. Centers are drawn
// uniformly over positions whose coarsest footprint stays in bounds; a draw
// whose level-0 patch is more than 90% background is rejected and redrawn
// (up to max_tries, then SamplingError).
PatchTuple sample_concentric_tuple(const PyramidImage& p, Rng& rng, int patch_size,
                                   std::array<int, 3> level_triple, int max_tries = 64);

// Single patch of size P at the given level whose footprint is centered at
// the level-0 coordinate (cx, cy).
Image extract_patch(const PyramidImage& p, int cx, int cy, int patch_size, int level);

// One downstream example: a patch location plus its ground-truth labels.
struct ExampleRec {
  int id = 0;
  int pyramid = 0;  // index into the owning dataset's pyramid list
  int cx = 0, cy = 0;
  int level = 0;
  int class_id = 0;
  float cellularity = 0.0f;
  std::string split = "pool";  // pool | val | test | pretrain
  int alpha_mask = 0;          // bit i set => in D_fl at kAlphas[i]
};

inline constexpr std::array<double, 4> kAlphas{0.10, 0.25, 0.50, 1.00};
int alpha_index(double alpha);  // ArgumentError if not one of kAlphas

struct DatasetSplit {
  std::vector<int> labeled;    // D_fl: indices into the pool
  std::vector<int> unlabeled;  // D_fu: the whole pool, labels to be ignored
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

// Seed-shuffled prefix split over pool indices [0, n_pool). Splits nest
// across alpha for a fixed seed.
DatasetSplit make_splits(int n_pool, double alpha, std::uint64_t seed);

// Line-delimited manifest: id split alpha_mask class cellularity pyramid cx cy level
void write_manifest(const std::string& path, const std::vector<ExampleRec>& recs);
std::vector<ExampleRec> read_manifest(const std::string& path);

// In-memory synthetic dataset: generated pyramids plus example pools.
struct SynthDataset {
  GenParams params;
  std::vector<SynthPyramid> pretrain_pyramids;
  std::vector<SynthPyramid> finetune_pyramids;  // pool + val examples live here
  std::vector<SynthPyramid> test_pyramids;
  std::vector<ExampleRec> pool, val, test;

  const SynthPyramid& pyramid_of(const ExampleRec& r) const;
  Image patch_of(const ExampleRec& r, int patch_size) const;
};

struct SynthDataConfig {
  GenParams gen;
  int pretrain_pyramids = 4;
  int finetune_pyramids = 4;
  int test_pyramids = 2;
  int examples_per_pyramid = 64;  // pool+val examples drawn per fine-tune pyramid
  int test_per_pyramid = 32;
  int patch_size = 32;
  int patch_level = 0;
  double val_frac = 0.2;  // carved from the fine-tune example pool
  bool allow_small = false;
};

// Deterministic given (seed, cfg). Examples are tissue-filtered patch
// centers with exact synthetic labels.
SynthDataset build_synth_dataset(std::uint64_t seed, const SynthDataConfig& cfg);

}  // namespace rsp
