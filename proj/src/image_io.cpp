#include "rsp/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace rsp {

Tensor to_tensor(const Image& img) {
  if (img.empty()) throw ArgumentError("to_tensor: empty image");
  Tensor t({img.c, img.h, img.w});
  const float inv = 1.0f / 255.0f;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.v[(static_cast<std::size_t>(ch) * img.h + y) * img.w + x] = img.at(y, x, ch) * inv;
  return t;
}

Image from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw ArgumentError("from_tensor: want rank-3 [C,H,W] tensor");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (c != 1 && c != 3) throw ArgumentError("from_tensor: channel count must be 1 or 3");
  Image img(h, w, c);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float v = t.v[(static_cast<std::size_t>(ch) * h + y) * w + x];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

void write_netpbm(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw ArgumentError("write_netpbm: channel count must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_netpbm: cannot open " + path);
  f << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!f) throw IoError("write_netpbm: write failed for " + path);
}

static void skip_ws_comments(std::istream& f) {
  int ch = f.peek();
  while (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '#') {
    if (ch == '#') {
      std::string line;
      std::getline(f, line);
    } else {
      f.get();
    }
    ch = f.peek();
  }
}

Image read_netpbm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_netpbm: cannot open " + path);
  std::string magic;
  f >> magic;
  int c;
  if (magic == "P6")
    c = 3;
  else if (magic == "P5")
    c = 1;
  else
    throw IoError("read_netpbm: unsupported magic '" + magic + "' in " + path);
  int w, h, maxval;
  skip_ws_comments(f);
  f >> w;
  skip_ws_comments(f);
  f >> h;
  skip_ws_comments(f);
  f >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw IoError("read_netpbm: bad header in " + path);
  f.get();  // single whitespace byte after maxval
  Image img(h, w, c);
  f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.px.size()))
    throw IoError("read_netpbm: truncated pixel data in " + path);
  return img;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.h || x0 + w > img.w)
    throw ArgumentError("crop: window out of bounds");
  Image out(h, w, img.c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
  return out;
}

Image downsample2x2(const Image& img) {
  const int h = img.h / 2, w = img.w / 2;
  Image out(h, w, img.c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        const int s = img.at(2 * y, 2 * x, ch) + img.at(2 * y, 2 * x + 1, ch) +
                      img.at(2 * y + 1, 2 * x, ch) + img.at(2 * y + 1, 2 * x + 1, ch);
        out.at(y, x, ch) = static_cast<std::uint8_t>((s + 2) / 4);
      }
  return out;
}

}  // namespace rsp
