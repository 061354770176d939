#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "rsp/dataset.hpp"

using namespace rsp;

namespace {

SynthPyramid small_pyramid(std::uint64_t seed, double bg = 0.2) {
  GenParams g;
  g.size = 256;
  g.region = 32;
  g.bg_frac = bg;
  return gen_pyramid(seed, g);
}

bool images_equal(const Image& a, const Image& b) {
  return a.h == b.h && a.w == b.w && a.c == b.c && a.px == b.px;
}

}  // namespace

TEST_CASE("permutations are the 6 lexicographic orderings") {
  const auto& perms = enumerate_permutations();
  REQUIRE(perms.size() == 6);
  CHECK(perms[0] == std::array<int, 3>{1, 2, 3});
  CHECK(perms[5] == std::array<int, 3>{3, 2, 1});
  std::set<std::array<int, 3>> uniq(perms.begin(), perms.end());
  CHECK(uniq.size() == 6);
  for (std::size_t i = 0; i + 1 < perms.size(); ++i) CHECK(perms[i] < perms[i + 1]);
}

TEST_CASE("permute round-trips for all labels") {
  PatchTuple t;
  t.S1 = Image(4, 4, 3, 10);
  t.S2 = Image(4, 4, 3, 20);
  t.S3 = Image(4, 4, 3, 30);
  for (int label = 0; label < 6; ++label) {
    const PermutedSequence s = permute_tuple(t, label);
    CHECK(s.label == label);
    const PatchTuple back = invert_permutation(s);
    CHECK(images_equal(back.S1, t.S1));
    CHECK(images_equal(back.S2, t.S2));
    CHECK(images_equal(back.S3, t.S3));
  }
  // identity and full reversal
  const PermutedSequence id = permute_tuple(t, 0);
  CHECK(id.patches[0].px[0] == 10);
  CHECK(id.patches[2].px[0] == 30);
  const PermutedSequence rev = permute_tuple(t, 5);
  CHECK(rev.patches[0].px[0] == 30);
  CHECK(rev.patches[2].px[0] == 10);
  CHECK_THROWS_AS(permute_tuple(t, 6), ArgumentError);
}

TEST_CASE("concentric tuples share a center and nest their footprints") {
  const SynthPyramid sp = small_pyramid(31);
  Rng rng = Rng::derive(1, "sample");
  for (int i = 0; i < 200; ++i) {
    const PatchTuple t = sample_concentric_tuple(sp.pyr, rng, 32, {2, 1, 0});
    CHECK(t.S1.h == 32);
    CHECK(t.S2.h == 32);
    CHECK(t.S3.h == 32);
    CHECK(t.mags[0] == 4.0);
    CHECK(t.mags[2] == 1.0);
    // footprint sides in level-0 units: S1 128, S2 64, S3 32, all centered
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const int fa = 32 * static_cast<int>(t.mags[a]);
        const int fb = 32 * static_cast<int>(t.mags[b]);
        // b is finer; its footprint corners must lie inside the central
        // half of a's footprint
        const int la = t.cx - fa / 2, ra = t.cx + fa / 2;
        const int lb = t.cx - fb / 2, rb = t.cx + fb / 2;
        CHECK(lb >= la + fa / 4);
        CHECK(rb <= ra - fa / 4);
      }
  }
}

TEST_CASE("a constant pyramid yields constant patches at every level") {
  GenParams g;
  g.size = 256;
  g.region = 32;
  g.bg_frac = 0.0;
  g.density_max = 0.0;
  g.distractors = 0;
  g.noise_sigma = 0.0;
  g.mod_amp = 0.0;
  const SynthPyramid sp = gen_pyramid(0, g);
  Rng rng = Rng::derive(2, "sample");
  const PatchTuple t = sample_concentric_tuple(sp.pyr, rng, 32, {2, 1, 0});
  for (int ch = 0; ch < 3; ++ch) {
    const std::uint8_t v = t.S3.at(0, 0, ch);
    for (const Image* im : {&t.S1, &t.S2, &t.S3})
      for (int y = 0; y < im->h; ++y)
        for (int x = 0; x < im->w; ++x) REQUIRE(im->at(y, x, ch) == v);
  }
}

TEST_CASE("sampler rejects when the whole slide is background") {
  // tissue mask all zero: fabricate by thresholding everything away
  GenParams g;
  g.size = 256;
  g.region = 32;
  g.bg_frac = 0.999;  // nearly everything background
  SynthPyramid sp = gen_pyramid(5, g);
  for (auto& v : sp.pyr.tissue[0].px) v = 0;  // force all background
  Rng rng = Rng::derive(3, "sample");
  CHECK_THROWS_AS(sample_concentric_tuple(sp.pyr, rng, 32, {2, 1, 0}, 16), SamplingError);
}

TEST_CASE("patch footprint too large for the coarsest level is a sampling error") {
  const SynthPyramid sp = small_pyramid(37);
  Rng rng = Rng::derive(4, "sample");
  CHECK_THROWS_AS(sample_concentric_tuple(sp.pyr, rng, 128, {2, 1, 0}), SamplingError);
  CHECK_THROWS_AS(sample_concentric_tuple(sp.pyr, rng, 32, {0, 0, 1}), ArgumentError);
}

TEST_CASE("splits take a seed-stable prefix with round(alpha*N) members") {
  const DatasetSplit s10 = make_splits(2063, 0.10, 7);
  CHECK(static_cast<int>(s10.labeled.size()) == 206);
  const DatasetSplit s25 = make_splits(2063, 0.25, 7);
  CHECK(static_cast<int>(s25.labeled.size()) == 516);
  const DatasetSplit s100 = make_splits(2063, 1.00, 7);
  CHECK(static_cast<int>(s100.labeled.size()) == 2063);
  CHECK(static_cast<int>(s100.unlabeled.size()) == 2063);

  // nesting: labeled(0.10) subset of labeled(0.25) under the same seed
  std::set<int> in25(s25.labeled.begin(), s25.labeled.end());
  for (int idx : s10.labeled) CHECK(in25.count(idx) == 1);

  // different seed, different prefix
  const DatasetSplit other = make_splits(2063, 0.10, 8);
  CHECK(other.labeled != s10.labeled);

  CHECK_THROWS_AS(make_splits(0, 0.10, 7), ConfigError);
  CHECK_THROWS_AS(make_splits(100, 0.3, 7), ArgumentError);
}

TEST_CASE("split nesting holds over many seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 101;
    std::set<int> prev;
    for (double a : kAlphas) {
      const DatasetSplit s = make_splits(n, a, seed);
      CHECK(static_cast<int>(s.labeled.size()) ==
            static_cast<int>(std::lround(a * n)));
      std::set<int> cur(s.labeled.begin(), s.labeled.end());
      for (int idx : prev) CHECK(cur.count(idx) == 1);
      prev = std::move(cur);
    }
  }
}

TEST_CASE("manifest round-trips records") {
  std::vector<ExampleRec> recs(3);
  recs[0] = {0, 1, 100, 120, 0, 2, 0.25f, "pool", 0b1111};
  recs[1] = {1, 0, 64, 64, 1, 0, 0.0f, "val", 0};
  recs[2] = {2, 2, 32, 32, 0, 1, 0.75f, "test", 0};
  const std::string path =
      (std::filesystem::temp_directory_path() / "rsp_manifest_test.txt").string();
  write_manifest(path, recs);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].alpha_mask == 0b1111);
  CHECK(back[0].cellularity == doctest::Approx(0.25));
  CHECK(back[1].split == "val");
  CHECK(back[2].pyramid == 2);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic dataset builds deterministic pools with alpha nesting") {
  SynthDataConfig cfg;
  cfg.gen.size = 256;
  cfg.gen.region = 32;
  cfg.pretrain_pyramids = 1;
  cfg.finetune_pyramids = 2;
  cfg.test_pyramids = 1;
  cfg.examples_per_pyramid = 20;
  cfg.test_per_pyramid = 8;
  const SynthDataset a = build_synth_dataset(11, cfg);
  const SynthDataset b = build_synth_dataset(11, cfg);
  CHECK(a.pool.size() + a.val.size() == 40);
  CHECK(a.test.size() == 8);
  CHECK(a.val.size() == 8);  // 20% of 40
  REQUIRE(a.pool.size() == b.pool.size());
  for (std::size_t i = 0; i < a.pool.size(); ++i) {
    CHECK(a.pool[i].cx == b.pool[i].cx);
    CHECK(a.pool[i].cellularity == b.pool[i].cellularity);
  }
  // alpha mask nesting: membership at lower alpha implies membership at higher
  for (const auto& r : a.pool)
    for (int i = 0; i + 1 < 4; ++i)
      if (r.alpha_mask & (1 << i)) CHECK((r.alpha_mask & (1 << (i + 1))) != 0);
  // every pool example is in D_fl at alpha = 1
  for (const auto& r : a.pool) CHECK((r.alpha_mask & 0b1000) != 0);
  // labels match an independent recount through the patch accessor
  const ExampleRec& r0 = a.pool.front();
  const float oracle = cellularity_in(a.pyramid_of(r0).cell_mask, r0.cx, r0.cy, 32);
  CHECK(r0.cellularity == doctest::Approx(oracle));
}
