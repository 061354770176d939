#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rsp/baselines.hpp"

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

rsp::NT rand_keys(int n, int d, rsp::Rng& rng) {
  rsp::NT k({n, d});
  for (double& v : k.v) v = rng.normal();
  return k;
}

}  // namespace

TEST_CASE("key queue follows FIFO semantics against a list oracle") {
  rsp::KeyQueue q(8);
  CHECK(q.capacity() == 8);
  CHECK(q.size() == 0);
  CHECK_THROWS_AS(q.tensor(), rsp::ArgumentError);
  CHECK_THROWS_AS(rsp::KeyQueue(0), rsp::ArgumentError);

  rsp::Rng rng(31);
  // Fill exactly to capacity.
  q.push(rand_keys(3, 4, rng));
  q.push(rand_keys(5, 4, rng));
  CHECK(q.size() == 8);
  const rsp::NT full = q.tensor();
  // One more row: the oldest leaves, order shifts by one.
  q.push(rand_keys(1, 4, rng));
  CHECK(q.size() == 8);
  const rsp::NT shifted = q.tensor();
  for (int c = 0; c < 4; ++c) CHECK(shifted.at2(0, c) == full.at2(1, c));

  // Random push sequence vs. an independently maintained list.
  rsp::KeyQueue q2(16);
  std::vector<std::vector<double>> oracle;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + rng.uniform_index(16);
    const rsp::NT keys = rand_keys(n, 3, rng);
    q2.push(keys);
    for (int i = 0; i < n; ++i)
      oracle.push_back({keys.at2(i, 0), keys.at2(i, 1), keys.at2(i, 2)});
    while (static_cast<int>(oracle.size()) > 16) oracle.erase(oracle.begin());
    REQUIRE(q2.size() == static_cast<int>(oracle.size()));
    const rsp::NT t = q2.tensor();
    for (std::size_t i = 0; i < oracle.size(); ++i)
      for (int c = 0; c < 3; ++c) CHECK(t.at2(static_cast<int>(i), c) == oracle[i][c]);
  }

  CHECK_THROWS_AS(q2.push(rand_keys(17, 3, rng)), rsp::ArgumentError);
  CHECK_THROWS_AS(q2.push(rand_keys(2, 5, rng)), rsp::ArgumentError);
}

TEST_CASE("contrastive config requires an explicit temperature") {
  rsp::MocoConfig cfg;
  cfg.enc.width = 2;
  CHECK_THROWS_AS(cfg.validate(), rsp::ConfigError);  // tau unset
  cfg.tau = 0.2;
  CHECK_NOTHROW(cfg.validate());
  auto expect_bad = [&](auto mutate) {
    rsp::MocoConfig c = cfg;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), rsp::ConfigError);
  };
  expect_bad([](rsp::MocoConfig& c) { c.m = 1.5; });
  expect_bad([](rsp::MocoConfig& c) { c.m = -0.1; });
  expect_bad([](rsp::MocoConfig& c) { c.batch = 300; });  // exceeds queue
  expect_bad([](rsp::MocoConfig& c) { c.queue = 0; });
  expect_bad([](rsp::MocoConfig& c) { c.sgd.lr = 0.0; });
}

TEST_CASE("key encoder parameters move only through the momentum rule") {
  const auto pyrs = make_pyramids(1, 128, 910);
  rsp::Rng rng(12);
  const auto pool = rsp::sample_patch_pool(pyrs, 64, 8, 0, rng);

  rsp::MocoConfig cfg;
  cfg.enc.width = 2;
  cfg.patch = 8;
  cfg.epochs = 2;
  cfg.batch = 16;
  cfg.queue = 32;
  cfg.tau = 0.5;
  cfg.seed = 3;

  // m = 1: the key encoder must stay bit-identical while the query trains.
  cfg.m = 1.0;
  const auto frozen = rsp::moco_pretrain(pool, cfg, nullptr);
  REQUIRE(frozen.key_checksums.size() == 2);
  CHECK(frozen.key_checksums[0] == frozen.key_checksums[1]);
  CHECK(frozen.epoch_loss.back() > 0.0);

  // m = 0: after every step the key encoder equals the query encoder, so the
  // final checkpoint (query weights) must hash to the key checksum.
  cfg.m = 0.0;
  const auto tracking = rsp::moco_pretrain(pool, cfg, nullptr);
  rsp::MocoNet qn(cfg.enc);
  rsp::load_all(tracking.ckpt, qn.params());
  CHECK(rsp::params_checksum(qn.params()) == tracking.key_checksums.back());
  CHECK(tracking.key_checksums[0] != frozen.key_checksums[0]);

  CHECK(frozen.ckpt.kind == "moco");
  CHECK_FALSE(frozen.ckpt.rsp_pathway);
  CHECK(frozen.ckpt.feature_dim == cfg.enc.out_dim);

  const rsp::PatchPool empty;
  CHECK_THROWS_AS(rsp::moco_pretrain(empty, cfg, nullptr), rsp::ConfigError);
}

TEST_CASE("contrastive training loss trends down on structured patches") {
  // Strong texture modulation so 16px views carry enough signal; with heavy
  // crops the two views of a small patch share almost nothing, so the desk run
  // keeps the photometric jitter but restricts crops to >=90% area.
  rsp::GenParams gp;
  gp.size = 128;
  gp.levels = 3;
  gp.mod_amp = 25.0;
  gp.density_max = 0.7;
  std::vector<rsp::SynthPyramid> pyrs;
  for (int i = 0; i < 2; ++i) pyrs.push_back(rsp::gen_pyramid(911 + i, gp, true));
  rsp::Rng rng(13);
  const auto pool = rsp::sample_patch_pool(pyrs, 256, 16, 0, rng);

  rsp::MocoConfig cfg;
  cfg.enc.width = 4;
  cfg.patch = 16;
  cfg.epochs = 20;
  cfg.batch = 16;
  cfg.queue = 64;
  cfg.tau = 0.1;
  cfg.m = 0.99;
  cfg.sgd.lr = 0.007;
  cfg.seed = 4;
  cfg.aug.crop_min = 0.9;
  for (auto& t : cfg.aug.transforms)
    if (t.kind == rsp::Tf::crop_resize) t.lo = 0.9;
  const auto res = rsp::moco_pretrain(pool, cfg, nullptr);
  REQUIRE(res.epoch_loss.size() == 20);
  INFO("first " << res.epoch_loss.front() << " last " << res.epoch_loss.back());
  CHECK(res.epoch_loss.back() <= 0.7 * res.epoch_loss.front());
}

TEST_CASE("vae training stays finite and its encoder seeds the plain pathway") {
  const auto pyrs = make_pyramids(1, 128, 912);
  rsp::Rng rng(14);
  const auto pool = rsp::sample_patch_pool(pyrs, 96, 8, 0, rng);

  rsp::VaeTrainConfig cfg;
  cfg.vae.enc.width = 2;
  cfg.vae.latent = 32;
  cfg.vae.patch = 8;
  cfg.epochs = 6;
  cfg.batch = 16;
  cfg.adam.lr = 1e-3;
  cfg.seed = 7;
  const auto res = rsp::vae_pretrain(pool, cfg, nullptr);
  REQUIRE(res.epoch_loss.size() == 6);
  for (double l : res.epoch_loss) CHECK(std::isfinite(l));
  for (double k : res.epoch_kl) CHECK(k >= 0.0);
  CHECK(res.epoch_loss.back() < res.epoch_loss.front());

  // The checkpoint drops into the non-pathway downstream model; only the
  // task head needs fresh weights.
  rsp::DownstreamConfig dc;
  dc.enc = cfg.vae.enc;
  dc.head.in_dim = dc.enc.out_dim;
  dc.head.classes = 0;
  rsp::DownstreamNet net(dc);
  rsp::Rng r2(8);
  net.init(r2);
  const auto missing = rsp::load_matching(res.ckpt, net.params());
  std::set<std::string> ms(missing.begin(), missing.end());
  for (const auto& name : ms) CHECK(name.rfind("head.", 0) == 0);
  CHECK(ms.size() == 6);

  auto bad = cfg;
  bad.adam.lr = 0.0;
  CHECK_THROWS_AS(rsp::vae_pretrain(pool, bad, nullptr), rsp::ConfigError);
  const rsp::PatchPool empty;
  CHECK_THROWS_AS(rsp::vae_pretrain(empty, cfg, nullptr), rsp::ConfigError);
}
