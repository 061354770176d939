#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "rsp/pyramid.hpp"

using namespace rsp;

namespace {
Image noisy_image(int h, int w, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "img");
  Image img(h, w, 3);
  for (auto& p : img.px) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}
}  // namespace

TEST_CASE("netpbm round-trip preserves pixels") {
  const Image img = noisy_image(13, 17, 1);
  const std::string path = std::filesystem::temp_directory_path() / "rsp_io_test.ppm";
  write_netpbm(path, img);
  const Image back = read_netpbm(path);
  CHECK(back.h == img.h);
  CHECK(back.w == img.w);
  CHECK(back.px == img.px);
  std::remove(path.c_str());
}

TEST_CASE("tensor conversion round-trips within quantization") {
  const Image img = noisy_image(8, 8, 2);
  const Image back = from_tensor(to_tensor(img));
  CHECK(back.px == img.px);
}

TEST_CASE("downsample2x2 averages quantized blocks") {
  Image img(2, 2, 1);
  img.px = {10, 20, 30, 40};  // mean 25
  const Image d = downsample2x2(img);
  CHECK(d.h == 1);
  CHECK(static_cast<int>(d.px[0]) == 25);
}

TEST_CASE("built pyramids satisfy the mean-pool invariant exactly") {
  PyramidImage p = build_pyramid(noisy_image(64, 64, 3), 4);
  CHECK(p.num_levels() == 4);
  CHECK(p.downsample[0] == 1.0);
  CHECK(p.downsample[3] == 8.0);
  CHECK(meanpool_max_error(p) == 0);
}

TEST_CASE("downsample factors are strictly increasing and start at 1") {
  PyramidImage p = build_pyramid(noisy_image(64, 64, 4), 3);
  for (int l = 0; l + 1 < p.num_levels(); ++l) CHECK(p.downsample[l] < p.downsample[l + 1]);
  CHECK(p.downsample[0] == 1.0);
}

TEST_CASE("fewer than 3 levels is a configuration error") {
  CHECK_THROWS_AS(build_pyramid(noisy_image(64, 64, 5), 2), ConfigError);
  GenParams g;
  g.levels = 2;
  CHECK_THROWS_AS(gen_pyramid(0, g), ConfigError);
  GenParams g2;
  g2.size = 128;
  CHECK_THROWS_AS(gen_pyramid(0, g2), ConfigError);
}

TEST_CASE("pyramid save/load round-trips rasters and metadata") {
  const auto dir = (std::filesystem::temp_directory_path() / "rsp_pyr_test").string();
  PyramidImage p = build_pyramid(noisy_image(64, 48, 6), 3, 0.5);
  save_pyramid(dir, "p0", p);
  const PyramidImage q = load_pyramid(dir, "p0");
  CHECK(q.num_levels() == 3);
  CHECK(q.microns_per_pixel_level0 == doctest::Approx(0.5));
  for (int l = 0; l < 3; ++l) CHECK(q.levels[l].px == p.levels[l].px);
  CHECK(q.downsample == p.downsample);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generated pyramid is deterministic and mean-pool consistent") {
  GenParams g;
  g.size = 256;
  g.region = 32;
  const SynthPyramid a = gen_pyramid(17, g);
  const SynthPyramid b = gen_pyramid(17, g);
  CHECK(a.pyr.levels[0].px == b.pyr.levels[0].px);
  CHECK(a.labels.cellularity == b.labels.cellularity);
  CHECK(meanpool_max_error(a.pyr) == 0);
  const SynthPyramid c = gen_pyramid(18, g);
  CHECK(a.pyr.levels[0].px != c.pyr.levels[0].px);
}

TEST_CASE("blank generator settings give an all-constant pyramid with zero labels") {
  GenParams g;
  g.size = 256;
  g.region = 32;
  g.bg_frac = 0.0;
  g.density_max = 0.0;
  g.distractors = 0;
  g.noise_sigma = 0.0;
  g.mod_amp = 0.0;
  const SynthPyramid s = gen_pyramid(0, g);
  for (const Image& lv : s.pyr.levels) {
    for (int ch = 0; ch < 3; ++ch) {
      const std::uint8_t v0 = lv.at(0, 0, ch);
      for (int y = 0; y < lv.h; ++y)
        for (int x = 0; x < lv.w; ++x) REQUIRE(lv.at(y, x, ch) == v0);
    }
  }
  for (float c : s.labels.cellularity) CHECK(c == 0.0f);
}

TEST_CASE("region cellularity equals direct mask counting") {
  GenParams g;
  g.size = 256;
  g.region = 32;
  const SynthPyramid s = gen_pyramid(23, g);
  bool any_positive = false;
  for (int gy = 0; gy < s.labels.gh; ++gy)
    for (int gx = 0; gx < s.labels.gw; ++gx) {
      long count = 0;
      for (int y = gy * 32; y < (gy + 1) * 32; ++y)
        for (int x = gx * 32; x < (gx + 1) * 32; ++x)
          if (s.cell_mask.at(y, x, 0) > 0) ++count;
      const float oracle = static_cast<float>(count / (32.0 * 32.0));
      const float got = s.labels.cellularity[gy * s.labels.gw + gx];
      CHECK(std::abs(got - oracle) <= 1e-6f);
      if (got > 0.0f) any_positive = true;
    }
  CHECK(any_positive);
}

TEST_CASE("background fraction lands near the requested value") {
  GenParams g;
  g.size = 256;
  g.region = 32;
  g.bg_frac = 0.25;
  const SynthPyramid s = gen_pyramid(29, g);
  long bg = 0;
  for (auto v : s.pyr.tissue[0].px)
    if (v == 0) ++bg;
  const double frac = static_cast<double>(bg) / s.pyr.tissue[0].px.size();
  CHECK(frac == doctest::Approx(0.25).epsilon(0.05));
}
