#pragma once

#include <vector>

#include "rsp/layers.hpp"

namespace rsp {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  virtual void set_lr(double lr) = 0;
  virtual double lr() const = 0;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool nesterov = true;
};

// g = grad + wd*w; v = m*v + g; nesterov: g = g + m*v; w -= lr*g.
// Velocity starts at zero, so the first step uses v = g.
class SgdNesterov : public Optimizer {
 public:
  SgdNesterov(std::vector<Param*> ps, const SgdConfig& cfg);
  void step() override;
  void set_lr(double lr) override { cfg_.lr = lr; }
  double lr() const override { return cfg_.lr; }

 private:
  std::vector<Param*> ps_;
  SgdConfig cfg_;
  std::vector<std::vector<double>> vel_;
};

struct LookaheadConfig {
  int k = 5;
  double alpha = 0.5;  // slow-weights step size, (0,1]
};

// Wraps the inner SGD step; every k steps slow weights take
// phi += alpha*(theta - phi) and fast weights reset to phi.
class Lookahead : public Optimizer {
 public:
  Lookahead(std::vector<Param*> ps, const SgdConfig& sgd, const LookaheadConfig& la);
  void step() override;
  void set_lr(double lr) override { inner_.set_lr(lr); }
  double lr() const override { return inner_.lr(); }
  int inner_steps() const { return steps_; }
  const std::vector<std::vector<double>>& slow() const { return slow_; }

 private:
  std::vector<Param*> ps_;
  SgdNesterov inner_;
  LookaheadConfig cfg_;
  std::vector<std::vector<double>> slow_;
  int steps_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // added to the gradient (classic Adam)
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Param*> ps, const AdamConfig& cfg);
  void step() override;
  void set_lr(double lr) override { cfg_.lr = lr; }
  double lr() const override { return cfg_.lr; }

 private:
  std::vector<Param*> ps_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Piecewise-constant decay: lr(epoch) = base * gamma^(#milestones <= epoch).
class MultiStepLr {
 public:
  MultiStepLr(double base_lr, std::vector<int> milestones, double gamma = 0.1);
  double lr_at(int epoch) const;

 private:
  double base_, gamma_;
  std::vector<int> milestones_;
};

// Exponential moving average of parameter values: k = m*k + (1-m)*q.
void momentum_update(const std::vector<Param*>& k, const std::vector<Param*>& q, double m);

}  // namespace rsp
