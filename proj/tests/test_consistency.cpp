#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "rsp/consistency.hpp"
#include "rsp/finetune.hpp"

namespace {

rsp::SynthDataset make_data(std::uint64_t seed, rsp::TaskMode mode, int per_pyramid) {
  rsp::SynthDataConfig dcfg;
  dcfg.gen.size = 128;
  dcfg.gen.levels = 3;
  dcfg.gen.mode = mode;
  dcfg.finetune_pyramids = 2;
  dcfg.pretrain_pyramids = 0;
  dcfg.test_pyramids = 0;
  dcfg.examples_per_pyramid = per_pyramid;
  dcfg.patch_size = 16;
  dcfg.val_frac = 0.2;
  dcfg.allow_small = true;
  return rsp::build_synth_dataset(seed, dcfg);
}

// Short supervised run producing the fine-tuned starting checkpoint.
rsp::Checkpoint make_fft(const rsp::SynthDataset& data, rsp::TaskMode mode) {
  rsp::EncoderConfig ec;
  ec.width = 2;
  ec.out_dim = 16;
  const rsp::Checkpoint init = rsp::random_init_checkpoint(ec, 3);
  rsp::FinetuneConfig cfg;
  cfg.mode = mode;
  cfg.n_classes = 4;
  cfg.h1 = 16;
  cfg.h2 = 8;
  cfg.patch = 16;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.milestones = {};
  cfg.adam.lr = 1e-3;
  cfg.seed = 9;
  std::vector<int> idx(data.pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return rsp::finetune(init, data, idx, cfg, nullptr).best;
}

// Fine-tuned checkpoint whose backbone routes through the pairwise MLP.
rsp::Checkpoint make_fft_pathway(const rsp::SynthDataset& data) {
  rsp::EncoderConfig ec;
  ec.width = 4;
  rsp::RspNet pretext(ec);
  rsp::Rng r(5);
  pretext.init(r);
  rsp::Checkpoint ck;
  ck.kind = "rsp";
  rsp::describe_encoder(ck, ec);
  ck.rsp_pathway = true;
  ck.feature_dim = rsp::RspHead::kConcat;
  rsp::store_params(ck, pretext.params());

  rsp::FinetuneConfig cfg;
  cfg.mode = rsp::TaskMode::regression;
  cfg.h1 = 16;
  cfg.h2 = 8;
  cfg.patch = 16;
  cfg.batch = 4;
  cfg.epochs = 1;
  cfg.milestones = {};
  cfg.adam.lr = 1e-3;
  cfg.seed = 9;
  std::vector<int> idx(data.pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return rsp::finetune(ck, data, idx, cfg, nullptr).best;
}

std::uint64_t loaded_checksum(const rsp::Checkpoint& ck) {
  rsp::DownstreamNet net(rsp::downstream_config(ck));
  rsp::load_all(ck, net.params());
  auto ps = net.params();
  return rsp::params_checksum(ps);
}

std::uint64_t loaded_backbone_checksum(const rsp::Checkpoint& ck) {
  rsp::DownstreamNet net(rsp::downstream_config(ck));
  rsp::load_all(ck, net.params());
  std::vector<rsp::Param*> enc;
  for (rsp::Param* p : net.params())
    if (p->name.rfind("enc.", 0) == 0) enc.push_back(p);
  return rsp::params_checksum(enc);
}

rsp::NT random_batch(int n, int patch, rsp::Rng& rng) {
  rsp::NT x({n, 3, patch, patch});
  for (double& v : x.v) v = rng.uniform(0.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("teacher and student start as the fine-tuned model with the right freeze") {
  const auto data = make_data(41, rsp::TaskMode::regression, 5);
  const rsp::Checkpoint f_ft = make_fft_pathway(data);

  auto ts = rsp::init_teacher_student(f_ft);
  auto tp = ts.teacher->params();
  auto sp = ts.student->params();
  const std::uint64_t ref = loaded_checksum(f_ft);
  CHECK(rsp::params_checksum(tp) == ref);
  CHECK(rsp::params_checksum(sp) == ref);

  for (const rsp::Param* p : tp) CHECK(p->trainable == false);
  bool saw_pair = false, saw_head = false, saw_enc = false;
  for (const rsp::Param* p : sp) {
    const bool mlp_or_head =
        p->name.rfind("pair.", 0) == 0 || p->name.rfind("head.", 0) == 0;
    CHECK(p->trainable == mlp_or_head);
    saw_pair = saw_pair || p->name.rfind("pair.", 0) == 0;
    saw_head = saw_head || p->name.rfind("head.", 0) == 0;
    saw_enc = saw_enc || p->name.rfind("enc.", 0) == 0;
  }
  CHECK(saw_pair);
  CHECK(saw_head);
  CHECK(saw_enc);

  // A checkpoint without a task head cannot seed the pair.
  rsp::EncoderConfig ec;
  ec.width = 2;
  ec.out_dim = 16;
  const rsp::Checkpoint headless = rsp::random_init_checkpoint(ec, 3);
  CHECK_THROWS_AS(rsp::init_teacher_student(headless), rsp::ConfigError);
}

TEST_CASE("one optimizer step moves only the pairwise MLP and head") {
  const auto data = make_data(41, rsp::TaskMode::regression, 5);
  const rsp::Checkpoint f_ft = make_fft_pathway(data);
  auto ts = rsp::init_teacher_student(f_ft);
  rsp::Rng rng(17);
  const rsp::NT x = random_batch(2, 16, rng);
  rsp::NT tgt({2, 1});
  tgt.at2(0, 0) = 0.2;
  tgt.at2(1, 0) = 0.8;

  // The freeze flags guard the teacher even if someone puts it in an
  // optimizer and drives a step through it.
  {
    rsp::AdamConfig ac;
    ac.lr = 1e-2;
    rsp::Adam opt(ts.teacher->params(), ac);
    ts.teacher->zero_grad();
    const rsp::NT out = ts.teacher->forward(x);
    rsp::NT dout;
    rsp::mse_elems(out, tgt, &dout);
    ts.teacher->backward(dout);
    opt.step();
    auto tp = ts.teacher->params();
    CHECK(rsp::params_checksum(tp) == loaded_checksum(f_ft));
  }

  // One real student step: backbone values stay bitwise put, the pairwise
  // MLP and head move.
  auto before_names = std::vector<std::string>();
  auto before_vals = std::vector<std::vector<double>>();
  for (rsp::Param* p : ts.student->params()) {
    before_names.push_back(p->name);
    before_vals.push_back(p->w.v);
  }
  rsp::AdamConfig ac;
  ac.lr = 1e-2;
  rsp::Adam opt(ts.student->params(), ac);
  ts.student->zero_grad();
  const rsp::NT out = ts.student->forward(x);
  rsp::NT dout;
  rsp::mse_elems(out, tgt, &dout);
  ts.student->backward(dout);
  opt.step();

  bool moved_mlp_or_head = false;
  std::size_t k = 0;
  for (rsp::Param* p : ts.student->params()) {
    REQUIRE(p->name == before_names[k]);
    if (p->name.rfind("enc.", 0) == 0) {
      CHECK(p->w.v == before_vals[k]);
    } else if (p->w.v != before_vals[k]) {
      moved_mlp_or_head = true;
    }
    ++k;
  }
  CHECK(moved_mlp_or_head);
}

TEST_CASE("gradients add across the supervised and consistency passes") {
  const auto data = make_data(41, rsp::TaskMode::classification, 5);
  const rsp::Checkpoint f_ft = make_fft(data, rsp::TaskMode::classification);
  const double lambda = 0.7;
  rsp::Rng rng(23);
  const rsp::NT x1 = random_batch(2, 16, rng);
  const rsp::NT x2 = random_batch(3, 16, rng);
  const std::vector<int> y{1, 3};

  auto grads_of = [&](bool sup, bool cons, double scale) {
    auto ts = rsp::init_teacher_student(f_ft);
    const rsp::NT q = ts.teacher->predict(x2);
    ts.student->zero_grad();
    if (sup) {
      const rsp::NT out = ts.student->forward(x1);
      rsp::NT dl;
      rsp::softmax_ce(out, y, &dl);
      ts.student->backward(dl);
    }
    if (cons) {
      const rsp::NT sout = ts.student->forward(x2);
      rsp::NT du;
      double mf = 0.0;
      rsp::consistency_cls(q, sout, 0.0, rsp::PseudoMode::hard, 0.0, &du, &mf);
      for (double& v : du.v) v *= scale;
      ts.student->backward(du);
    }
    std::vector<double> g;
    for (rsp::Param* p : ts.student->params())
      g.insert(g.end(), p->g.v.begin(), p->g.v.end());
    return g;
  };

  const auto g_both = grads_of(true, true, lambda);
  const auto g_sup = grads_of(true, false, 1.0);
  const auto g_cons = grads_of(false, true, 1.0);
  REQUIRE(g_both.size() == g_sup.size());
  REQUIRE(g_both.size() == g_cons.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < g_both.size(); ++i) {
    const double want = g_sup[i] + lambda * g_cons[i];
    worst = std::max(worst, std::abs(g_both[i] - want) / std::max(1.0, std::abs(want)));
  }
  INFO("worst relative gap " << worst);
  CHECK(worst <= 1e-10);
}

TEST_CASE("epoch swap, teacher freeze and backbone constancy hold over a run") {
  const auto data = make_data(42, rsp::TaskMode::regression, 10);
  const rsp::Checkpoint f_ft = make_fft(data, rsp::TaskMode::regression);
  std::vector<int> labeled{0, 1, 2, 3, 4, 5};
  std::vector<int> unlabeled(data.pool.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) unlabeled[i] = static_cast<int>(i);

  rsp::ConsistencyConfig cfg;
  cfg.lambda = 1.0;
  cfg.mu = 2;
  cfg.batch = 2;
  cfg.epochs = 3;
  cfg.milestones = {};
  cfg.adam.lr = 1e-3;
  cfg.patch = 16;
  cfg.seed = 11;

  const std::string log_path = "cr_metrics_test.log";
  std::remove(log_path.c_str());
  rsp::MetricsLog log(log_path, "cr-reg");
  const auto res = rsp::consistency_train(f_ft, data, labeled, unlabeled, cfg, &log);

  REQUIRE(res.teacher_start.size() == 3);
  REQUIRE(res.teacher_end.size() == 3);
  REQUIRE(res.student_end.size() == 3);
  CHECK(res.teacher_start[0] == loaded_checksum(f_ft));
  for (int e = 0; e < 3; ++e) CHECK(res.teacher_start[e] == res.teacher_end[e]);
  for (int e = 0; e + 1 < 3; ++e) CHECK(res.teacher_start[e + 1] == res.student_end[e]);
  CHECK(res.student_end[0] != res.teacher_start[0]);  // training moved the student

  const std::uint64_t bb = loaded_backbone_checksum(f_ft);
  for (std::uint64_t c : res.student_backbone) CHECK(c == bb);

  for (double m : res.mask_frac) CHECK(m == 1.0);  // regression: no confidence mask
  for (double l : res.cons_loss) {
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
  }
  CHECK(res.best_epoch == rsp::select_min(res.val_loss));
  CHECK(res.best.kind == "consist");
  CHECK(res.best.stats.at("best_epoch")[0] == doctest::Approx(res.best_epoch));

  // The metrics log carries the supervised, consistency and mask columns.
  const auto recs = rsp::read_metrics(log_path);
  std::set<std::string> train_metrics;
  int val_rows = 0;
  for (const auto& r : recs) {
    if (r.split == "train") train_metrics.insert(r.metric);
    if (r.split == "val" && r.metric == "loss") ++val_rows;
  }
  CHECK(train_metrics ==
        std::set<std::string>{"loss_sup", "loss_cons", "loss_total", "mask_frac"});
  CHECK(val_rows == 3);
  std::remove(log_path.c_str());
}

TEST_CASE("disabled and fully-masked consistency march in lockstep") {
  const auto data = make_data(43, rsp::TaskMode::classification, 10);
  const rsp::Checkpoint f_ft = make_fft(data, rsp::TaskMode::classification);
  std::vector<int> labeled{0, 1, 2, 3, 4, 5};
  std::vector<int> unlabeled(data.pool.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) unlabeled[i] = static_cast<int>(i);

  rsp::ConsistencyConfig base;
  base.mu = 2;
  base.batch = 2;
  base.epochs = 3;
  base.milestones = {};
  base.adam.lr = 1e-3;
  base.patch = 16;
  base.seed = 11;

  auto off = base;
  off.lambda = 0.0;
  auto masked = base;
  masked.lambda = 1.0;
  masked.tau_c = 1.01;  // no probability clears the bar: every term masked

  const auto ra = rsp::consistency_train(f_ft, data, labeled, unlabeled, off, nullptr);
  const auto rb = rsp::consistency_train(f_ft, data, labeled, unlabeled, masked, nullptr);

  CHECK(ra.student_end == rb.student_end);
  CHECK(ra.teacher_start == rb.teacher_start);
  CHECK(ra.val_loss == rb.val_loss);
  CHECK(ra.val_acc == rb.val_acc);
  CHECK(ra.best_epoch == rb.best_epoch);
  CHECK(rsp::checkpoint_hash(ra.best) == rsp::checkpoint_hash(rb.best));

  for (double l : ra.cons_loss) CHECK(l == 0.0);
  for (double l : rb.cons_loss) CHECK(l == 0.0);
  for (double m : ra.mask_frac) CHECK(m == 1.0);  // branch skipped entirely
  for (double m : rb.mask_frac) CHECK(m == 0.0);  // branch ran, fully masked

  // tau_c = 0 in hard mode: every unlabeled example contributes a term.
  auto open = base;
  open.lambda = 1.0;
  open.tau_c = 0.0;
  const auto rc = rsp::consistency_train(f_ft, data, labeled, unlabeled, open, nullptr);
  for (double m : rc.mask_frac) CHECK(m == 1.0);
  CHECK(*std::max_element(rc.cons_loss.begin(), rc.cons_loss.end()) > 0.0);
  CHECK(rc.student_end != ra.student_end);  // live consistency changes training
}

TEST_CASE("batch construction: sizes, reshuffled coverage and refusals") {
  std::vector<int> lpool(10), upool(40);
  for (int i = 0; i < 10; ++i) lpool[i] = i;
  for (int i = 0; i < 40; ++i) upool[i] = i;

  rsp::Rng r1(3), r2(4);
  rsp::BatchSampler ls(lpool, &r1), us(upool, &r2);
  const auto plan = rsp::build_batch(ls, us, 4, 7);
  CHECK(plan.labeled.size() == 4);
  CHECK(plan.unlabeled.size() == 28);
  for (int i : plan.labeled) CHECK((i >= 0 && i < 10));
  for (int i : plan.unlabeled) CHECK((i >= 0 && i < 40));

  const auto even = rsp::build_batch(ls, us, 3, 1);
  CHECK(even.labeled.size() == even.unlabeled.size());

  CHECK_THROWS_AS(rsp::build_batch(ls, us, 0, 7), rsp::ConfigError);
  CHECK_THROWS_AS(rsp::build_batch(ls, us, 4, 0), rsp::ConfigError);
  CHECK_THROWS_AS(rsp::build_batch(ls, us, 6, 7), rsp::ConfigError);  // 42 > 40

  // Two pool lengths of draws: every index appears exactly twice.
  rsp::Rng r3(5);
  rsp::BatchSampler cover(upool, &r3);
  std::vector<int> counts(40, 0);
  for (int b = 0; b < 20; ++b)
    for (int i : cover.next(4)) ++counts[i];
  for (int c : counts) CHECK(c == 2);

  rsp::Rng r4(6);
  CHECK_THROWS_AS(rsp::BatchSampler({}, &r4), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::BatchSampler(lpool, nullptr), rsp::ArgumentError);
  rsp::BatchSampler bad(lpool, &r4);
  CHECK_THROWS_AS(bad.next(0), rsp::ArgumentError);
}

TEST_CASE("teacher inference is deterministic with normalized rows") {
  const auto data = make_data(41, rsp::TaskMode::classification, 5);
  const rsp::Checkpoint f_ft = make_fft(data, rsp::TaskMode::classification);
  auto ts = rsp::init_teacher_student(f_ft);
  rsp::Rng rng(29);
  const rsp::NT x = random_batch(4, 16, rng);
  const rsp::NT q1 = ts.teacher->predict(x);
  const rsp::NT q2 = ts.teacher->predict(x);
  CHECK(q1.v == q2.v);
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int c = 0; c < 4; ++c) {
      CHECK(q1.at2(i, c) >= 0.0);
      row += q1.at2(i, c);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("consistency run rejects bad configs, indices and pools") {
  const auto data = make_data(42, rsp::TaskMode::regression, 10);
  const rsp::Checkpoint f_ft = make_fft(data, rsp::TaskMode::regression);
  std::vector<int> labeled{0, 1, 2, 3};
  std::vector<int> unlabeled(data.pool.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) unlabeled[i] = static_cast<int>(i);

  rsp::ConsistencyConfig good;
  good.mu = 2;
  good.batch = 2;
  good.epochs = 1;
  good.milestones = {};
  good.patch = 16;

  auto expect_bad = [&](auto mutate) {
    auto c = good;
    mutate(c);
    CHECK_THROWS_AS(rsp::consistency_train(f_ft, data, labeled, unlabeled, c, nullptr),
                    rsp::ConfigError);
  };
  expect_bad([](rsp::ConsistencyConfig& c) { c.lambda = -0.1; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.mu = 0; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.batch = 0; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.tau_c = 1.02; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.tau_c = -0.01; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.eps_ls = 1.0; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.epochs = 0; });
  expect_bad([](rsp::ConsistencyConfig& c) {
    c.epochs = 6;
    c.milestones = {5, 5};
  });
  expect_bad([](rsp::ConsistencyConfig& c) { c.gamma = 0.0; });
  expect_bad([](rsp::ConsistencyConfig& c) { c.adam.lr = 0.0; });

  // mu*B exceeding the unlabeled pool trips on the first step.
  auto big = good;
  big.mu = 7;
  big.batch = 4;  // 28 > 16
  CHECK_THROWS_AS(rsp::consistency_train(f_ft, data, labeled, unlabeled, big, nullptr),
                  rsp::ConfigError);

  CHECK_THROWS_AS(rsp::consistency_train(f_ft, data, {}, unlabeled, good, nullptr),
                  rsp::ConfigError);
  CHECK_THROWS_AS(rsp::consistency_train(f_ft, data, labeled, {}, good, nullptr),
                  rsp::ConfigError);
  std::vector<int> oob = labeled;
  oob.push_back(static_cast<int>(data.pool.size()));
  CHECK_THROWS_AS(rsp::consistency_train(f_ft, data, oob, unlabeled, good, nullptr),
                  rsp::ArgumentError);
}
