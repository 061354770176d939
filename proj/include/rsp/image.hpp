#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsp/common.hpp"
#include "rsp/tensor.hpp"

namespace rsp {

// 8-bit image, row-major, interleaved channels (HWC). c is 1 or 3.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> px;

  Image() = default;
  Image(int h_, int w_, int c_, std::uint8_t fill = 0)
      : h(h_), w(w_), c(c_), px(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::uint8_t& at(int y, int x, int ch) {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  bool empty() const { return px.empty(); }
};

// Image <-> float tensor [C,H,W], values in [0,1].
Tensor to_tensor(const Image& img);
Image from_tensor(const Tensor& t);  // clamps to [0,1], rounds to nearest

// Netpbm binary formats: P6 for 3-channel, P5 for 1-channel.
void write_netpbm(const std::string& path, const Image& img);
Image read_netpbm(const std::string& path);

Image crop(const Image& img, int y0, int x0, int h, int w);

// 2x2 mean downsample with round-half-up quantization; odd trailing row/col dropped.
Image downsample2x2(const Image& img);

}  // namespace rsp
