#include "rsp/finetune.hpp"

#include <algorithm>
#include <numeric>

#include "rsp/losses.hpp"

namespace rsp {

void FinetuneConfig::validate() const {
  if (epochs <= 0 || batch <= 0 || patch <= 0)
    throw ConfigError("finetune: epochs, batch and patch must be positive");
  if (mode == TaskMode::classification && n_classes < 2)
    throw ConfigError("finetune: classification needs >= 2 classes");
  if (h1 <= 0 || h2 <= 0) throw ConfigError("finetune: head widths must be positive");
  if (adam.lr <= 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1 || adam.eps <= 0 || adam.weight_decay < 0)
    throw ConfigError("finetune: bad adam config");
  if (gamma <= 0) throw ConfigError("finetune: gamma must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs)
      throw ConfigError("finetune: milestone beyond the last epoch");
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw ConfigError("finetune: milestones must be strictly increasing");
  }
}

// Downstream layout implied by the initializing checkpoint: pretext
// checkpoints route through the pairwise pathway (768-d features), the
// others feed encoder features straight into the head.
static DownstreamConfig plan_downstream(const Checkpoint& init, const FinetuneConfig& cfg) {
  DownstreamConfig dc;
  dc.enc.arch = init.enc_arch;
  dc.enc.width = init.enc_width;
  dc.enc.out_dim = init.enc_out;
  dc.rsp_pathway = init.rsp_pathway;
  dc.head.in_dim = init.rsp_pathway ? RspHead::kConcat : init.enc_out;
  if (init.feature_dim != dc.head.in_dim)
    throw ConfigError("finetune: checkpoint feature dim " +
                      std::to_string(init.feature_dim) + " does not match head input " +
                      std::to_string(dc.head.in_dim));
  dc.head.classes = cfg.mode == TaskMode::classification ? cfg.n_classes : 0;
  dc.head.h1 = cfg.h1;
  dc.head.h2 = cfg.h2;
  return dc;
}

FinetuneResult finetune(const Checkpoint& init, const SynthDataset& data,
                        const std::vector<int>& train_idx, const FinetuneConfig& cfg,
                        MetricsLog* log) {
  cfg.validate();
  if (train_idx.empty()) throw ConfigError("finetune: no labeled examples");
  if (data.val.empty()) throw ConfigError("finetune: empty validation split");
  for (int i : train_idx)
    if (i < 0 || i >= static_cast<int>(data.pool.size()))
      throw ArgumentError("finetune: train index out of range");

  const DownstreamConfig dc = plan_downstream(init, cfg);
  DownstreamNet net(dc);
  Rng init_rng = Rng::derive(cfg.seed, "finetune.init");
  Rng aug_rng = Rng::derive(cfg.seed, "finetune.aug");
  Rng shuffle_rng = Rng::derive(cfg.seed, "finetune.shuffle");
  net.init(init_rng);
  for (const std::string& name : load_matching(init, net.params()))
    if (name.rfind("head.", 0) != 0)
      throw ConfigError("finetune: checkpoint missing backbone parameter '" + name + "'");
  FreezeSpec::uniform(net.params(), true).apply(net.params());

  Adam opt(net.params(), cfg.adam);
  const MultiStepLr sched(cfg.adam.lr, cfg.milestones, cfg.gamma);
  const AugPolicy& aug = cfg.aug;
  const bool cls = dc.head.classes > 0;

  FinetuneResult res;
  std::vector<int> order = train_idx;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(sched.lr_at(epoch));
    res.lr_schedule.push_back(opt.lr());
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      std::vector<Tensor> rows;
      rows.reserve(bn);
      std::vector<int> y(bn);
      NT tgt({bn, 1});
      for (int i = 0; i < bn; ++i) {
        const ExampleRec& r = data.pool[order[b0 + i]];
        push_view(rows, data.patch_of(r, cfg.patch), aug, aug_rng);
        y[i] = r.class_id;
        tgt.at2(i, 0) = static_cast<double>(r.cellularity);
      }
      const NT x = stack_batch(rows);
      net.zero_grad();
      const NT out = net.forward(x);
      NT dout;
      if (cls) {
        loss_sum += softmax_ce(out, y, &dout) * bn;
        for (int i = 0; i < bn; ++i)
          if (argmax_row(out, i) == y[i]) ++correct;
      } else {
        loss_sum += mse_elems(out, tgt, &dout) * bn;
      }
      seen += bn;
      net.backward(dout);
      opt.step();
    }
    res.train_loss.push_back(loss_sum / static_cast<double>(seen));
    res.train_acc.push_back(cls ? static_cast<double>(correct) / static_cast<double>(seen)
                                : 0.0);

    const EvalResult ev = eval_downstream(net, data, data.val, cfg.patch, cfg.batch);
    res.val_loss.push_back(ev.loss);
    res.val_acc.push_back(ev.acc);

    if (log) {
      log->log(epoch, "train", "loss", res.train_loss.back());
      if (cls) log->log(epoch, "train", "acc", res.train_acc.back());
      log->log(epoch, "train", "lr", opt.lr());
      log->log(epoch, "val", "loss", ev.loss);
      if (cls) log->log(epoch, "val", "acc", ev.acc);
    }

    // Selection: lowest val loss (regression) / highest val accuracy
    // (classification); strict comparison keeps the first epoch on ties.
    const double metric = cls ? ev.acc : ev.loss;
    const bool better = res.best_epoch < 0 ||
                        (cls ? metric > res.best_val_metric : metric < res.best_val_metric);
    if (better) {
      res.best_val_metric = metric;
      res.best_epoch = epoch;
      Checkpoint ck;
      ck.kind = "finetune";
      describe_downstream(ck, dc);
      ck.rng_state = aug_rng.state();
      store_params(ck, net.params());
      ck.stats["best_epoch"] = {static_cast<double>(epoch)};
      ck.stats["val_loss"] = {ev.loss};
      ck.stats["val_acc"] = {ev.acc};
      ck.stats["init_kind_was_pathway"] = {dc.rsp_pathway ? 1.0 : 0.0};
      res.best = std::move(ck);
    }
  }
  return res;
}

}  // namespace rsp
