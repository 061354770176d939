#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rsp/optim.hpp"
#include "rsp/rng.hpp"

using rsp::NT;
using rsp::Param;

namespace {

Param make_param(const std::string& name, std::vector<double> w) {
  Param p;
  p.name = name;
  p.w = NT({static_cast<int>(w.size())});
  p.w.v = std::move(w);
  p.g = NT(p.w.shape);
  return p;
}

}  // namespace

TEST_CASE("momentum update rule step by step") {
  // lr=0.1, m=0.9, no decay, constant gradient 1:
  // v1=1, g'=1+0.9 -> w=1-0.19=0.81; v2=1.9, g'=1+1.71 -> w=0.81-0.271=0.539
  Param p = make_param("w", {1.0});
  rsp::SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  rsp::SgdNesterov opt({&p}, cfg);
  p.g.v[0] = 1.0;
  opt.step();
  CHECK(p.w.v[0] == doctest::Approx(0.81).epsilon(1e-12));
  p.g.v[0] = 1.0;
  opt.step();
  CHECK(p.w.v[0] == doctest::Approx(0.539).epsilon(1e-12));
}

TEST_CASE("weight decay adds wd*w to the gradient before momentum") {
  Param p = make_param("w", {2.0});
  rsp::SgdConfig cfg;
  cfg.lr = 0.5;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.1;
  cfg.nesterov = false;
  rsp::SgdNesterov opt({&p}, cfg);
  p.g.v[0] = 1.0;
  opt.step();
  // g = 1 + 0.1*2 = 1.2; w = 2 - 0.5*1.2 = 1.4
  CHECK(p.w.v[0] == doctest::Approx(1.4).epsilon(1e-12));
}

TEST_CASE("frozen parameters are never updated") {
  Param a = make_param("a", {1.0});
  Param b = make_param("b", {1.0});
  b.trainable = false;
  rsp::SgdConfig cfg;
  rsp::SgdNesterov opt({&a, &b}, cfg);
  a.g.v[0] = b.g.v[0] = 1.0;
  for (int i = 0; i < 10; ++i) opt.step();
  CHECK(a.w.v[0] != 1.0);
  CHECK(b.w.v[0] == 1.0);

  rsp::Adam ad({&a, &b}, rsp::AdamConfig{});
  const double aw = a.w.v[0];
  ad.step();
  CHECK(a.w.v[0] != aw);
  CHECK(b.w.v[0] == 1.0);
}

TEST_CASE("slow-weight interpolation arithmetic at a sync point") {
  // phi starts at theta0=0; one inner step moves theta to 2 (lr=1, g=-2);
  // k=1 syncs immediately: phi' = 0 + 0.5*(2-0) = 1, theta' = 1.
  Param p = make_param("w", {0.0});
  rsp::SgdConfig sgd;
  sgd.lr = 1.0;
  sgd.momentum = 0.0;
  sgd.weight_decay = 0.0;
  sgd.nesterov = false;
  rsp::LookaheadConfig la;
  la.k = 1;
  la.alpha = 0.5;
  rsp::Lookahead opt({&p}, sgd, la);
  p.g.v[0] = -2.0;
  opt.step();
  CHECK(p.w.v[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(opt.slow()[0][0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("slow weights update only on every k-th step") {
  Param p = make_param("w", {0.0});
  rsp::SgdConfig sgd;
  sgd.lr = 0.1;
  sgd.momentum = 0.0;
  sgd.weight_decay = 0.0;
  rsp::LookaheadConfig la;
  la.k = 5;
  la.alpha = 0.5;
  rsp::Lookahead opt({&p}, sgd, la);
  for (int s = 1; s <= 4; ++s) {
    p.g.v[0] = -1.0;
    opt.step();
    CHECK(opt.slow()[0][0] == 0.0);  // untouched on steps 1..4
  }
  const double theta_before = p.w.v[0];
  p.g.v[0] = -1.0;
  opt.step();  // step 5 syncs
  const double theta5 = theta_before + 0.1;  // momentum 0: plain lr*g step
  CHECK(opt.slow()[0][0] == doctest::Approx(0.5 * theta5).epsilon(1e-9));
  CHECK(p.w.v[0] == doctest::Approx(opt.slow()[0][0]).epsilon(1e-15));
}

TEST_CASE("alpha=1, k=1 reduces to plain SGD with momentum") {
  rsp::Rng rng = rsp::Rng::derive(31, "opt-equiv");
  std::vector<double> init(16);
  for (auto& v : init) v = rng.normal();
  Param a = make_param("a", init);
  Param b = make_param("b", init);
  rsp::SgdConfig sgd;
  sgd.lr = 0.05;
  sgd.momentum = 0.9;
  sgd.weight_decay = 1e-4;
  rsp::SgdNesterov plain({&a}, sgd);
  rsp::LookaheadConfig la;
  la.k = 1;
  la.alpha = 1.0;
  rsp::Lookahead wrapped({&b}, sgd, la);
  for (int s = 0; s < 100; ++s) {
    for (int i = 0; i < 16; ++i) {
      const double g = rng.normal();
      a.g.v[i] = g;
      b.g.v[i] = g;
    }
    plain.step();
    wrapped.step();
  }
  for (int i = 0; i < 16; ++i) CHECK(std::abs(a.w.v[i] - b.w.v[i]) <= 1e-7);
}

TEST_CASE("interpolation config validation") {
  Param p = make_param("w", {0.0});
  rsp::SgdConfig sgd;
  rsp::LookaheadConfig la;
  la.k = 0;
  CHECK_THROWS_AS(rsp::Lookahead({&p}, sgd, la), rsp::ConfigError);
  la.k = 5;
  la.alpha = 0.0;
  CHECK_THROWS_AS(rsp::Lookahead({&p}, sgd, la), rsp::ConfigError);
  la.alpha = 1.5;
  CHECK_THROWS_AS(rsp::Lookahead({&p}, sgd, la), rsp::ConfigError);
}

TEST_CASE("adaptive-moment step size approaches lr for a constant gradient") {
  for (double gscale : {1.0, 1e-3, 50.0}) {
    Param p = make_param("w", {0.0});
    rsp::AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    rsp::Adam opt({&p}, cfg);
    p.g.v[0] = gscale;
    opt.step();
    // bias correction makes the first step ~lr regardless of gradient scale
    CHECK(p.w.v[0] == doctest::Approx(-0.1).epsilon(1e-6));
    p.g.v[0] = gscale;
    opt.step();
    CHECK(p.w.v[0] == doctest::Approx(-0.2).epsilon(1e-5));
  }
}

TEST_CASE("adaptive-moment hand-computed first step with decay") {
  Param p = make_param("w", {1.0});
  rsp::AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.5;
  rsp::Adam opt({&p}, cfg);
  p.g.v[0] = 1.0;
  opt.step();
  // g = 1 + 0.5*1 = 1.5; mhat = 1.5, vhat = 2.25 -> step = lr*1.5/1.5 = lr
  CHECK(p.w.v[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("stepped decay schedule hits exact factors") {
  rsp::MultiStepLr sched(1e-4, {30, 60});
  CHECK(sched.lr_at(0) == 1e-4);
  CHECK(sched.lr_at(29) == 1e-4);
  CHECK(sched.lr_at(30) == 1e-4 * 0.1);
  CHECK(sched.lr_at(59) == 1e-4 * 0.1);
  CHECK(sched.lr_at(60) == 1e-4 * 0.1 * 0.1);
  CHECK(sched.lr_at(89) == 1e-4 * 0.1 * 0.1);
  CHECK_THROWS_AS(rsp::MultiStepLr(1.0, {30, 30}), rsp::ConfigError);
  CHECK_THROWS_AS(rsp::MultiStepLr(1.0, {60, 30}), rsp::ConfigError);
}

TEST_CASE("exponential moving average of parameters") {
  Param k = make_param("k", {0.0});
  Param q = make_param("q", {1.0});
  rsp::momentum_update({&k}, {&q}, 1.0);
  CHECK(k.w.v[0] == 0.0);  // m=1 leaves the target unchanged
  rsp::momentum_update({&k}, {&q}, 0.9);
  CHECK(k.w.v[0] == doctest::Approx(0.1).epsilon(1e-15));

  // geometric closed form against a constant source
  Param k2 = make_param("k2", {2.0});
  Param q2 = make_param("q2", {-1.0});
  const double m = 0.999;
  const int T = 50;
  for (int t = 0; t < T; ++t) rsp::momentum_update({&k2}, {&q2}, m);
  const double want = std::pow(m, T) * 2.0 + (1.0 - std::pow(m, T)) * -1.0;
  CHECK(std::abs(k2.w.v[0] - want) <= 1e-6);

  Param bad = make_param("bad", {0.0, 0.0});
  CHECK_THROWS_AS(rsp::momentum_update({&bad}, {&q}, 0.5), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::momentum_update({&k}, {&q}, 1.5), rsp::ArgumentError);
}
