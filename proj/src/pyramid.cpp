#include "rsp/pyramid.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace rsp {

static Image downsample_mask(const Image& m) {
  const int h = m.h / 2, w = m.w / 2;
  Image out(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int n = (m.at(2 * y, 2 * x, 0) > 0) + (m.at(2 * y, 2 * x + 1, 0) > 0) +
                    (m.at(2 * y + 1, 2 * x, 0) > 0) + (m.at(2 * y + 1, 2 * x + 1, 0) > 0);
      out.at(y, x, 0) = n >= 2 ? 255 : 0;
    }
  return out;
}

PyramidImage build_pyramid(Image level0, int n_levels, double mpp) {
  return build_pyramid(std::move(level0), Image(), n_levels, mpp);
}

PyramidImage build_pyramid(Image level0, Image tissue0, int n_levels, double mpp) {
  if (n_levels < 3) throw ConfigError("build_pyramid: need at least 3 levels");
  if (level0.h < (1 << (n_levels - 1)) || level0.w < (1 << (n_levels - 1)))
    throw ConfigError("build_pyramid: level 0 too small for requested level count");
  PyramidImage p;
  p.microns_per_pixel_level0 = mpp;
  p.levels.push_back(std::move(level0));
  p.downsample.push_back(1.0);
  const bool with_mask = !tissue0.empty();
  if (with_mask) p.tissue.push_back(std::move(tissue0));
  for (int l = 1; l < n_levels; ++l) {
    p.levels.push_back(downsample2x2(p.levels.back()));
    p.downsample.push_back(p.downsample.back() * 2.0);
    if (with_mask) p.tissue.push_back(downsample_mask(p.tissue.back()));
  }
  return p;
}

int meanpool_max_error(const PyramidImage& p) {
  int worst = 0;
  for (int l = 0; l + 1 < p.num_levels(); ++l) {
    const Image down = downsample2x2(p.levels[l]);
    const Image& next = p.levels[l + 1];
    if (down.h != next.h || down.w != next.w || down.c != next.c)
      throw IntegrityError("meanpool_max_error: level shape mismatch");
    for (std::size_t i = 0; i < down.px.size(); ++i) {
      const int d = std::abs(static_cast<int>(down.px[i]) - static_cast<int>(next.px[i]));
      if (d > worst) worst = d;
    }
  }
  return worst;
}

void save_pyramid(const std::string& dir, const std::string& stem, const PyramidImage& p) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string base = dir + "/" + stem;
  for (int l = 0; l < p.num_levels(); ++l)
    write_netpbm(base + "-l" + std::to_string(l) + ".ppm", p.levels[l]);
  for (std::size_t l = 0; l < p.tissue.size(); ++l)
    write_netpbm(base + "-t" + std::to_string(l) + ".pgm", p.tissue[l]);
  std::ofstream meta(base + "-meta.txt");
  if (!meta) throw IoError("save_pyramid: cannot write metadata for " + base);
  meta << "levels " << p.num_levels() << "\n";
  meta << "tissue " << p.tissue.size() << "\n";
  meta << "mpp " << p.microns_per_pixel_level0 << "\n";
  meta << "downsample";
  for (double d : p.downsample) meta << " " << d;
  meta << "\n";
}

PyramidImage load_pyramid(const std::string& dir, const std::string& stem) {
  const std::string base = dir + "/" + stem;
  std::ifstream meta(base + "-meta.txt");
  if (!meta) throw IoError("load_pyramid: missing metadata for " + base);
  PyramidImage p;
  std::string key;
  int n_levels = 0, n_tissue = 0;
  while (meta >> key) {
    if (key == "levels")
      meta >> n_levels;
    else if (key == "tissue")
      meta >> n_tissue;
    else if (key == "mpp")
      meta >> p.microns_per_pixel_level0;
    else if (key == "downsample") {
      p.downsample.resize(n_levels);
      for (int l = 0; l < n_levels; ++l) meta >> p.downsample[l];
    }
  }
  if (n_levels < 3) throw IntegrityError("load_pyramid: metadata lists fewer than 3 levels");
  for (int l = 0; l < n_levels; ++l)
    p.levels.push_back(read_netpbm(base + "-l" + std::to_string(l) + ".ppm"));
  for (int l = 0; l < n_tissue; ++l)
    p.tissue.push_back(read_netpbm(base + "-t" + std::to_string(l) + ".pgm"));
  return p;
}

}  // namespace rsp
