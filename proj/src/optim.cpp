#include "rsp/optim.hpp"

#include <cmath>

namespace rsp {

SgdNesterov::SgdNesterov(std::vector<Param*> ps, const SgdConfig& cfg)
    : ps_(std::move(ps)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError("SgdNesterov: lr must be positive");
  if (cfg_.momentum < 0.0 || cfg_.weight_decay < 0.0)
    throw ConfigError("SgdNesterov: momentum and weight decay must be nonnegative");
  vel_.reserve(ps_.size());
  for (const Param* p : ps_) vel_.emplace_back(p->w.v.size(), 0.0);
}

void SgdNesterov::step() {
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    Param& p = *ps_[i];
    if (!p.trainable) continue;
    std::vector<double>& v = vel_[i];
    for (std::size_t j = 0; j < p.w.v.size(); ++j) {
      double g = p.g.v[j] + cfg_.weight_decay * p.w.v[j];
      v[j] = cfg_.momentum * v[j] + g;
      if (cfg_.nesterov) g += cfg_.momentum * v[j];
      else g = v[j];
      p.w.v[j] -= cfg_.lr * g;
    }
  }
}

Lookahead::Lookahead(std::vector<Param*> ps, const SgdConfig& sgd, const LookaheadConfig& la)
    : ps_(ps), inner_(ps, sgd), cfg_(la) {
  if (cfg_.k < 1) throw ConfigError("Lookahead: k must be >= 1");
  if (cfg_.alpha <= 0.0 || cfg_.alpha > 1.0) throw ConfigError("Lookahead: alpha must be in (0,1]");
  slow_.reserve(ps_.size());
  for (const Param* p : ps_) slow_.push_back(p->w.v);
}

void Lookahead::step() {
  inner_.step();
  ++steps_;
  if (steps_ % cfg_.k != 0) return;
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    if (!ps_[i]->trainable) continue;
    std::vector<double>& phi = slow_[i];
    std::vector<double>& theta = ps_[i]->w.v;
    for (std::size_t j = 0; j < phi.size(); ++j) {
      phi[j] += cfg_.alpha * (theta[j] - phi[j]);
      theta[j] = phi[j];
    }
  }
}

Adam::Adam(std::vector<Param*> ps, const AdamConfig& cfg) : ps_(std::move(ps)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError("Adam: lr must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
    throw ConfigError("Adam: betas must be in [0,1)");
  m_.reserve(ps_.size());
  v_.reserve(ps_.size());
  for (const Param* p : ps_) {
    m_.emplace_back(p->w.v.size(), 0.0);
    v_.emplace_back(p->w.v.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    Param& p = *ps_[i];
    if (!p.trainable) continue;
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t j = 0; j < p.w.v.size(); ++j) {
      const double g = p.g.v[j] + cfg_.weight_decay * p.w.v[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.w.v[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

MultiStepLr::MultiStepLr(double base_lr, std::vector<int> milestones, double gamma)
    : base_(base_lr), gamma_(gamma), milestones_(std::move(milestones)) {
  for (std::size_t i = 1; i < milestones_.size(); ++i)
    if (milestones_[i] <= milestones_[i - 1])
      throw ConfigError("MultiStepLr: milestones must be strictly increasing");
}

double MultiStepLr::lr_at(int epoch) const {
  double lr = base_;
  for (int ms : milestones_)
    if (epoch >= ms) lr *= gamma_;
  return lr;
}

void momentum_update(const std::vector<Param*>& k, const std::vector<Param*>& q, double m) {
  if (m < 0.0 || m > 1.0) throw ArgumentError("momentum_update: m must be in [0,1]");
  if (k.size() != q.size()) throw ArgumentError("momentum_update: parameter count mismatch");
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (k[i]->w.v.size() != q[i]->w.v.size())
      throw ArgumentError("momentum_update: shape mismatch at '" + k[i]->name + "'");
    for (std::size_t j = 0; j < k[i]->w.v.size(); ++j)
      k[i]->w.v[j] = m * k[i]->w.v[j] + (1.0 - m) * q[i]->w.v[j];
  }
}

}  // namespace rsp
