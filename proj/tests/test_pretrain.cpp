#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cstdio>
#include <fstream>
#include <set>

#include "rsp/pretrain.hpp"

namespace {

std::vector<rsp::SynthPyramid> make_pyramids(int n, int size, std::uint64_t seed) {
  rsp::GenParams gp;
  gp.size = size;
  gp.levels = 3;
  std::vector<rsp::SynthPyramid> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(rsp::gen_pyramid(seed + i, gp, true));
  return out;
}

}  // namespace

TEST_CASE("metrics log round-trips and appends") {
  const std::string path = "/tmp/rsp_metrics_rt.log";
  std::remove(path.c_str());
  {
    rsp::MetricsLog log(path, "run-1");
    log.log(0, "train", "loss", 1.5);
    log.log(0, "val", "loss", 0.125);
    log.log(1, "train", "loss", 0.75);
  }
  auto recs = rsp::read_metrics(path);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].run_id == "run-1");
  CHECK(recs[0].epoch == 0);
  CHECK(recs[0].split == "train");
  CHECK(recs[0].metric == "loss");
  CHECK(recs[0].value == 1.5);
  CHECK(recs[1].value == 0.125);
  CHECK(recs[2].epoch == 1);

  {
    rsp::MetricsLog log(path, "run-2");
    log.log(5, "val", "acc", 0.5);
  }
  recs = rsp::read_metrics(path);
  REQUIRE(recs.size() == 4);
  CHECK(recs[3].run_id == "run-2");
  CHECK(recs[3].value == 0.5);

  {
    std::ofstream bad(path, std::ios::app);
    bad << "malformed line\n";
  }
  CHECK_THROWS_AS(rsp::read_metrics(path), rsp::IntegrityError);
  CHECK_THROWS_AS(rsp::read_metrics("/tmp/rsp_missing_metrics.log"), rsp::IoError);
}

TEST_CASE("batch stacking and selection helpers") {
  rsp::Tensor a({2, 2, 2}), b({2, 2, 2});
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    a.v[i] = static_cast<float>(i);
    b.v[i] = static_cast<float>(10 + i);
  }
  const rsp::NT x = rsp::stack_batch({a, b});
  REQUIRE(x.shape == std::vector<int>{2, 2, 2, 2});
  CHECK(x.v[0] == 0.0);
  CHECK(x.v[7] == 7.0);
  CHECK(x.v[8] == 10.0);
  CHECK(x.v[15] == 17.0);

  rsp::Tensor c({2, 2, 3});
  CHECK_THROWS_AS(rsp::stack_batch({a, c}), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::stack_batch({}), rsp::ArgumentError);

  CHECK(rsp::select_min({3.0, 2.5, 2.7, 2.5}) == 1);  // first minimum on ties
  CHECK(rsp::select_max({1.0, 4.0, 4.0}) == 1);
  CHECK(rsp::select_min({0.5}) == 0);
  CHECK_THROWS_AS(rsp::select_min({}), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::select_max({}), rsp::ArgumentError);
}

TEST_CASE("tuple and patch pools sample deterministically with tissue rejection") {
  const auto pyrs = make_pyramids(2, 128, 900);
  rsp::Rng r1(7), r2(7);
  const auto pa = rsp::sample_tuple_pool(pyrs, 10, 8, {2, 1, 0}, r1);
  const auto pb = rsp::sample_tuple_pool(pyrs, 10, 8, {2, 1, 0}, r2);
  REQUIRE(pa.tuples.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(pa.tuples[i].S3.h == 8);
    CHECK(pa.tuples[i].S1.w == 8);
    CHECK(pa.tuples[i].cx == pb.tuples[i].cx);
    CHECK(pa.tuples[i].cy == pb.tuples[i].cy);
    CHECK(pa.tuples[i].S2.px == pb.tuples[i].S2.px);
  }

  rsp::Rng r3(8);
  const auto pool = rsp::sample_patch_pool(pyrs, 12, 8, 0, r3);
  REQUIRE(pool.patches.size() == 12);
  for (const rsp::Image& im : pool.patches) {
    CHECK(im.h == 8);
    CHECK(im.w == 8);
    CHECK(im.c == 3);
  }

  CHECK_THROWS_AS(rsp::sample_patch_pool(pyrs, 0, 8, 0, r3), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::sample_patch_pool(pyrs, 4, 8, 9, r3), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::sample_tuple_pool({}, 4, 8, {2, 1, 0}, r3), rsp::ArgumentError);
}

TEST_CASE("random-init checkpoints are deterministic per seed") {
  rsp::EncoderConfig ec;
  ec.width = 4;
  const auto ck = rsp::random_init_checkpoint(ec, 11);
  CHECK(ck.kind == "random");
  CHECK_FALSE(ck.rsp_pathway);
  CHECK(ck.feature_dim == ec.out_dim);
  CHECK(!ck.params.empty());
  const auto ck2 = rsp::random_init_checkpoint(ec, 11);
  CHECK(rsp::checkpoint_hash(ck) == rsp::checkpoint_hash(ck2));
  const auto ck3 = rsp::random_init_checkpoint(ec, 12);
  CHECK(rsp::checkpoint_hash(ck) != rsp::checkpoint_hash(ck3));
}

TEST_CASE("pretraining rejects bad configs and empty data") {
  const auto pyrs = make_pyramids(1, 128, 901);
  rsp::Rng rng(5);
  const auto train = rsp::sample_tuple_pool(pyrs, 3, 8, {2, 1, 0}, rng);
  const auto val = rsp::sample_tuple_pool(pyrs, 2, 8, {2, 1, 0}, rng);

  rsp::PretrainConfig cfg;
  cfg.enc.width = 2;
  cfg.patch = 8;
  cfg.epochs = 1;

  auto expect_bad = [&](auto mutate) {
    rsp::PretrainConfig c = cfg;
    mutate(c);
    CHECK_THROWS_AS(rsp::rsp_pretrain(train, val, c, nullptr), rsp::ConfigError);
  };
  expect_bad([](rsp::PretrainConfig& c) { c.epochs = 0; });
  expect_bad([](rsp::PretrainConfig& c) { c.batch = 0; });
  expect_bad([](rsp::PretrainConfig& c) { c.lookahead.k = 0; });
  expect_bad([](rsp::PretrainConfig& c) { c.lookahead.alpha = 0.0; });
  expect_bad([](rsp::PretrainConfig& c) { c.lookahead.alpha = 1.5; });
  expect_bad([](rsp::PretrainConfig& c) { c.sgd.lr = 0.0; });

  const rsp::TuplePool empty;
  CHECK_THROWS_AS(rsp::rsp_pretrain(empty, val, cfg, nullptr), rsp::ConfigError);
  CHECK_THROWS_AS(rsp::rsp_pretrain(train, empty, cfg, nullptr), rsp::ConfigError);
}

TEST_CASE("permutation labels drawn over an epoch are uniform (chi-squared)") {
  const auto pyrs = make_pyramids(2, 128, 902);
  rsp::Rng rng(6);
  const auto train = rsp::sample_tuple_pool(pyrs, 6000, 8, {2, 1, 0}, rng);
  const auto val = rsp::sample_tuple_pool(pyrs, 12, 8, {2, 1, 0}, rng);

  rsp::PretrainConfig cfg;
  cfg.enc.width = 2;
  cfg.patch = 8;
  cfg.epochs = 1;
  cfg.batch = 64;
  cfg.seed = 5;
  const auto res = rsp::rsp_pretrain(train, val, cfg, nullptr);

  long total = 0;
  for (long c : res.label_counts) total += c;
  REQUIRE(total == 6000);
  const double expected = static_cast<double>(total) / 6.0;
  double x2 = 0.0;
  for (long c : res.label_counts) {
    const double d = static_cast<double>(c) - expected;
    x2 += d * d / expected;
  }
  const boost::math::chi_squared dist(5);
  const double p = boost::math::cdf(boost::math::complement(dist, x2));
  INFO("chi2 = " << x2 << ", p = " << p);
  CHECK(p > 0.01);
}

TEST_CASE("tiny-pool pretraining overfits, selects the argmin epoch, and stamps metadata") {
  const auto pyrs = make_pyramids(2, 128, 903);
  rsp::Rng rng(9);
  const auto train = rsp::sample_tuple_pool(pyrs, 16, 16, {2, 1, 0}, rng);
  const auto val = rsp::sample_tuple_pool(pyrs, 8, 16, {2, 1, 0}, rng);

  rsp::PretrainConfig cfg;
  cfg.enc.width = 4;
  cfg.patch = 16;
  cfg.epochs = 30;
  cfg.batch = 16;
  cfg.seed = 21;
  const auto res = rsp::rsp_pretrain(train, val, cfg, nullptr);

  REQUIRE(res.train_loss.size() == 30);
  // Overfit regime: the loss tail is non-increasing within 5% noise.
  for (std::size_t e = 5; e + 1 < res.train_loss.size(); ++e)
    CHECK(res.train_loss[e + 1] <= res.train_loss[e] * 1.05);
  CHECK(res.train_loss.back() < res.train_loss.front());

  // Selection = argmin of the recorded validation curve (first on ties).
  CHECK(res.best_epoch == rsp::select_min(res.val_loss));
  CHECK(res.best_val_loss == res.val_loss[res.best_epoch]);
  REQUIRE(res.best.stats.count("best_epoch") == 1);
  CHECK(res.best.stats.at("best_epoch")[0] == static_cast<double>(res.best_epoch));

  CHECK(res.best.kind == "rsp");
  CHECK(res.best.rsp_pathway);
  CHECK(res.best.feature_dim == rsp::RspHead::kConcat);
  CHECK(res.best.head_classes == -1);
  std::set<std::string> names;
  for (const auto& b : res.best.params) names.insert(b.name);
  CHECK(names.count("enc.conv1.w") == 1);
  CHECK(names.count("pair.fc1.w") == 1);
  CHECK(names.count("seq.fc2.b") == 1);
}
