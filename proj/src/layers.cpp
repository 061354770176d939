#include "rsp/layers.hpp"

#include <cmath>

namespace rsp {

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
  w.name = name + ".w";
  b.name = name + ".b";
  w.w = NT({out_ch, in_ch, ksize, ksize});
  b.w = NT({out_ch});
  w.zero_grad();
  b.zero_grad();
}

void Conv2d::init(Rng& rng) {
  const double std = std::sqrt(2.0 / (in_ch_ * k_ * k_));
  for (auto& v : w.w.v) v = rng.normal(0.0, std);
  b.w.fill(0.0);
}

NT Conv2d::forward(const NT& x) {
  if (x.rank() != 4 || x.dim(1) != in_ch_)
    throw ArgumentError(w.name + ": input must be [N," + std::to_string(in_ch_) + ",H,W]");
  x_ = x;
  NT y;
  kern::conv2d_fwd(x, w.w, b.w, stride_, pad_, y);
  return y;
}

NT Conv2d::backward(const NT& gy) {
  kern::conv2d_bwd_params(x_, gy, stride_, pad_, w.g, b.g);
  NT gx;
  kern::conv2d_bwd_input(gy, w.w, stride_, pad_, x_.dim(2), x_.dim(3), gx);
  return gx;
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

Linear::Linear(std::string name, int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
  w.name = name + ".w";
  b.name = name + ".b";
  w.w = NT({out_dim, in_dim});
  b.w = NT({out_dim});
  w.zero_grad();
  b.zero_grad();
}

void Linear::init(Rng& rng) {
  const double std = std::sqrt(2.0 / in_);
  for (auto& v : w.w.v) v = rng.normal(0.0, std);
  b.w.fill(0.0);
}

NT Linear::forward(const NT& x) {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw ArgumentError(w.name + ": input must be [N," + std::to_string(in_) + "]");
  x_ = x;
  NT y;
  kern::linear_fwd(x, w.w, b.w, y);
  return y;
}

NT Linear::backward(const NT& gy) {
  kern::linear_bwd_params(x_, gy, w.g, b.g);
  NT gx;
  kern::linear_bwd_input(gy, w.w, gx);
  return gx;
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

NT ReLU::forward(const NT& x) {
  x_ = x;
  NT y;
  kern::relu_fwd(x, y);
  return y;
}

NT ReLU::backward(const NT& gy) {
  NT gx;
  kern::relu_bwd(x_, gy, gx);
  return gx;
}

NT Sigmoid::forward(const NT& x) {
  NT y = x;
  for (auto& v : y.v) v = 1.0 / (1.0 + std::exp(-v));
  y_ = y;
  return y;
}

NT Sigmoid::backward(const NT& gy) {
  NT gx = gy;
  for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= y_.v[i] * (1.0 - y_.v[i]);
  return gx;
}

NT AvgPool2::forward(const NT& x) {
  h_ = x.dim(2);
  w_ = x.dim(3);
  NT y;
  kern::avgpool2_fwd(x, y);
  return y;
}

NT AvgPool2::backward(const NT& gy) {
  NT gx;
  kern::avgpool2_bwd(gy, h_, w_, gx);
  return gx;
}

NT GlobalAvgPool::forward(const NT& x) {
  h_ = x.dim(2);
  w_ = x.dim(3);
  NT y;
  kern::global_avgpool_fwd(x, y);
  return y;
}

NT GlobalAvgPool::backward(const NT& gy) {
  NT gx;
  kern::global_avgpool_bwd(gy, h_, w_, gx);
  return gx;
}

NT Upsample2::forward(const NT& x) {
  NT y;
  kern::upsample2_fwd(x, y);
  return y;
}

NT Upsample2::backward(const NT& gy) {
  NT gx;
  kern::upsample2_bwd(gy, gx);
  return gx;
}

NT Reshape4::forward(const NT& x) {
  if (x.rank() != 2 || x.dim(1) != c_ * h_ * w_)
    throw ArgumentError("Reshape4: input width mismatch");
  NT y = x;
  y.shape = {x.dim(0), c_, h_, w_};
  return y;
}

NT Reshape4::backward(const NT& gy) {
  NT gx = gy;
  gx.shape = {gy.dim(0), c_ * h_ * w_};
  return gx;
}

NT Net::forward(const NT& x) {
  NT cur = x;
  for (auto& l : layers_) cur = l->forward(cur);
  return cur;
}

NT Net::backward(const NT& gy) {
  NT cur = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

std::vector<Param*> Net::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) l->collect(out);
  return out;
}

void Net::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

void Net::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

std::uint64_t params_checksum(const std::vector<Param*>& ps) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Param* p : ps) {
    h = fnv1a64(p->name, h);
    h = fnv1a64(p->w.v.data(), p->w.v.size() * sizeof(double), h);
  }
  return h;
}

void copy_params(const std::vector<Param*>& from, const std::vector<Param*>& to) {
  if (from.size() != to.size()) throw ConfigError("copy_params: parameter lists differ in size");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->w.v.size() != to[i]->w.v.size())
      throw ConfigError("copy_params: shape mismatch at " + from[i]->name);
    to[i]->w = from[i]->w;
  }
}

}  // namespace rsp
