#include "rsp/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "rsp/losses.hpp"

namespace rsp {

// ---- key queue ----

KeyQueue::KeyQueue(int capacity) : cap_(capacity) {
  if (capacity < 1) throw ArgumentError("key queue: capacity must be >= 1");
}

void KeyQueue::push(const NT& keys) {
  if (keys.shape.size() != 2) throw ArgumentError("key queue: keys must be [n,d]");
  const int n = keys.dim(0), d = keys.dim(1);
  if (n > cap_) throw ArgumentError("key queue: batch exceeds capacity");
  if (dim_ < 0) dim_ = d;
  if (d != dim_) throw ArgumentError("key queue: key dimension changed");
  for (int i = 0; i < n; ++i)
    rows_.emplace_back(keys.v.begin() + static_cast<std::size_t>(i) * d,
                       keys.v.begin() + static_cast<std::size_t>(i + 1) * d);
  while (static_cast<int>(rows_.size()) > cap_) rows_.pop_front();
}

NT KeyQueue::tensor() const {
  if (rows_.empty()) throw ArgumentError("key queue: empty");
  NT out({static_cast<int>(rows_.size()), dim_});
  std::size_t off = 0;
  for (const std::vector<double>& r : rows_)
    for (double v : r) out.v[off++] = v;
  return out;
}

// ---- contrastive pretraining ----

void MocoConfig::validate() const {
  if (epochs <= 0 || batch <= 0 || patch <= 0 || queue <= 0)
    throw ConfigError("moco: sizes must be positive");
  if (m < 0.0 || m > 1.0) throw ConfigError("moco: momentum outside [0,1]");
  if (tau <= 0.0) throw ConfigError("moco: temperature must be set explicitly");
  if (batch > queue) throw ConfigError("moco: batch exceeds queue capacity");
  if (sgd.lr <= 0 || sgd.momentum < 0 || sgd.weight_decay < 0)
    throw ConfigError("moco: bad sgd config");
}

MocoResult moco_pretrain(const PatchPool& data, const MocoConfig& cfg, MetricsLog* log) {
  cfg.validate();
  if (data.patches.empty()) throw ConfigError("moco: empty dataset");

  Rng init_rng = Rng::derive(cfg.seed, "moco.init");
  Rng aug_rng = Rng::derive(cfg.seed, "moco.aug");
  Rng shuffle_rng = Rng::derive(cfg.seed, "moco.shuffle");

  MocoNet q_net(cfg.enc), k_net(cfg.enc);
  q_net.init(init_rng);
  copy_params(q_net.params(), k_net.params());
  FreezeSpec::uniform(k_net.params(), false).apply(k_net.params());

  SgdNesterov opt(q_net.params(), cfg.sgd);
  KeyQueue queue(cfg.queue);
  const AugPolicy& aug = cfg.aug;

  MocoResult res;
  std::vector<int> order(data.patches.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      std::vector<Tensor> qrows, krows;
      qrows.reserve(bn);
      krows.reserve(bn);
      for (int i = 0; i < bn; ++i) {
        const Image& img = data.patches[order[b0 + i]];
        push_view(qrows, img, aug, aug_rng);
        push_view(krows, img, aug, aug_rng);
      }
      const NT q = q_net.forward(stack_batch(qrows));
      const NT k = k_net.forward(stack_batch(krows));
      const int d = q.dim(1);

      if (queue.size() == 0) {
        // Warm-up: no negatives yet, the batch only seeds the queue.
        queue.push(k);
        continue;
      }
      const NT negs = queue.tensor();
      const int nneg = negs.dim(0);
      NT sims({bn, 1 + nneg});
      for (int i = 0; i < bn; ++i) {
        double pos = 0.0;
        for (int c = 0; c < d; ++c) pos += q.at2(i, c) * k.at2(i, c);
        sims.at2(i, 0) = pos;
        for (int j = 0; j < nneg; ++j) {
          double s = 0.0;
          for (int c = 0; c < d; ++c) s += q.at2(i, c) * negs.at2(j, c);
          sims.at2(i, 1 + j) = s;
        }
      }
      NT dsims;
      const double loss = info_nce_batch(sims, cfg.tau, cfg.mode, &dsims);

      // Keys and queue entries are detached; only q carries gradient.
      NT dq({bn, d});
      for (int i = 0; i < bn; ++i)
        for (int c = 0; c < d; ++c) {
          double g = dsims.at2(i, 0) * k.at2(i, c);
          for (int j = 0; j < nneg; ++j) g += dsims.at2(i, 1 + j) * negs.at2(j, c);
          dq.at2(i, c) = g;
        }
      q_net.zero_grad();
      q_net.backward(dq);
      opt.step();
      momentum_update(k_net.params(), q_net.params(), cfg.m);
      queue.push(k);
      loss_sum += loss;
      ++steps;
    }
    const double epoch_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    res.epoch_loss.push_back(epoch_loss);
    res.key_checksums.push_back(params_checksum(k_net.params()));
    if (log) log->log(epoch, "train", "loss", epoch_loss);
  }

  Checkpoint ck;
  ck.kind = "moco";
  describe_encoder(ck, cfg.enc);
  ck.rng_state = aug_rng.state();
  store_params(ck, q_net.params());
  ck.stats["final_loss"] = {res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()};
  res.ckpt = std::move(ck);
  return res;
}

// ---- generative pretraining ----

void VaeTrainConfig::validate() const {
  if (epochs <= 0 || batch <= 0) throw ConfigError("vae: sizes must be positive");
  if (adam.lr <= 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1 || adam.eps <= 0 || adam.weight_decay < 0)
    throw ConfigError("vae: bad adam config");
  if (vae.latent <= 0) throw ConfigError("vae: latent dim must be positive");
}

VaeResult vae_pretrain(const PatchPool& data, const VaeTrainConfig& cfg, MetricsLog* log) {
  cfg.validate();
  if (data.patches.empty()) throw ConfigError("vae: empty dataset");

  Rng init_rng = Rng::derive(cfg.seed, "vae.init");
  Rng noise_rng = Rng::derive(cfg.seed, "vae.noise");
  Rng shuffle_rng = Rng::derive(cfg.seed, "vae.shuffle");

  VaeNet net(cfg.vae);
  net.init(init_rng);
  Adam opt(net.params(), cfg.adam);

  VaeResult res;
  std::vector<int> order(data.patches.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0;
    long seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      std::vector<Tensor> rows;
      rows.reserve(bn);
      for (int i = 0; i < bn; ++i)
        rows.push_back(to_tensor(data.patches[order[b0 + i]]));
      const NT x = stack_batch(rows);
      VaeNet::Forward f = net.forward(x, noise_rng);
      NT drecon, dmu, dlogvar;
      const double recon = sse_batchmean(f.recon, x, &drecon);
      const double kl = vae_kl(f.mu, f.logvar, &dmu, &dlogvar);
      net.zero_grad();
      net.backward(f, dmu, dlogvar, drecon);
      opt.step();
      loss_sum += (recon + kl) * bn;
      recon_sum += recon * bn;
      kl_sum += kl * bn;
      seen += bn;
    }
    const double denom = static_cast<double>(seen);
    res.epoch_loss.push_back(loss_sum / denom);
    res.epoch_recon.push_back(recon_sum / denom);
    res.epoch_kl.push_back(kl_sum / denom);
    if (log) {
      log->log(epoch, "train", "loss", res.epoch_loss.back());
      log->log(epoch, "train", "recon", res.epoch_recon.back());
      log->log(epoch, "train", "kl", res.epoch_kl.back());
    }
  }

  Checkpoint ck;
  ck.kind = "vae";
  describe_encoder(ck, cfg.vae.enc);
  ck.rng_state = noise_rng.state();
  store_params(ck, net.params());
  ck.stats["final_loss"] = {res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()};
  res.ckpt = std::move(ck);
  return res;
}

}  // namespace rsp
