#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsp/kernels.hpp"
#include "rsp/rng.hpp"
#include "rsp/tensor.hpp"

namespace rsp {

// Network math runs in double precision: gradient checks against central
// finite differences and bit-exact trajectory comparisons stay clean.
using NT = TensorD;

struct Param {
  std::string name;
  NT w, g;
  bool trainable = true;

  void zero_grad() {
    g.shape = w.shape;
    g.v.assign(w.v.size(), 0.0);
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual NT forward(const NT& x) = 0;
  // Accumulates parameter gradients, returns gradient w.r.t. the input.
  virtual NT backward(const NT& gy) = 0;
  virtual void collect(std::vector<Param*>& out) { (void)out; }
  virtual void init(Rng& rng) { (void)rng; }
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad);
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;
  void collect(std::vector<Param*>& out) override;
  void init(Rng& rng) override;

  Param w, b;

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  NT x_;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_dim, int out_dim);
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;
  void collect(std::vector<Param*>& out) override;
  void init(Rng& rng) override;

  Param w, b;

 private:
  int in_, out_;
  NT x_;
};

class ReLU : public Layer {
 public:
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;

 private:
  NT x_;
};

class Sigmoid : public Layer {
 public:
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;

 private:
  NT y_;
};

class AvgPool2 : public Layer {
 public:
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;

 private:
  int h_ = 0, w_ = 0;
};

class GlobalAvgPool : public Layer {
 public:
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;

 private:
  int h_ = 0, w_ = 0;
};

class Upsample2 : public Layer {
 public:
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;
};

// [N, C*H*W] <-> [N, C, H, W]
class Reshape4 : public Layer {
 public:
  Reshape4(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  NT forward(const NT& x) override;
  NT backward(const NT& gy) override;

 private:
  int c_, h_, w_;
};

// Plain sequential container with a parameter registry.
class Net {
 public:
  Net() = default;
  Net(Net&&) = default;
  Net& operator=(Net&&) = default;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  NT forward(const NT& x);
  NT backward(const NT& gy);
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Helpers shared by the model code.
std::uint64_t params_checksum(const std::vector<Param*>& ps);
void copy_params(const std::vector<Param*>& from, const std::vector<Param*>& to);

}  // namespace rsp
