#include "rsp/consistency.hpp"

#include <algorithm>
#include <cmath>

namespace rsp {

void ConsistencyConfig::validate() const {
  if (batch <= 0) throw ConfigError("consistency: labeled batch size must be positive");
  if (mu < 1) throw ConfigError("consistency: mu must be >= 1");
  if (lambda < 0.0) throw ConfigError("consistency: lambda must be >= 0");
  if (tau_c < 0.0 || tau_c > 1.01)
    throw ConfigError("consistency: tau_c outside [0, 1.01]");
  if (eps_ls < 0.0 || eps_ls >= 1.0)
    throw ConfigError("consistency: smoothing outside [0, 1)");
  if (n_aug < 1 || n_aug > 7)
    throw ConfigError("consistency: n_aug outside 1..7");
  if (epochs <= 0 || patch <= 0)
    throw ConfigError("consistency: epochs and patch must be positive");
  if (adam.lr <= 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1 || adam.eps <= 0 || adam.weight_decay < 0)
    throw ConfigError("consistency: bad adam config");
  if (gamma <= 0) throw ConfigError("consistency: gamma must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs)
      throw ConfigError("consistency: milestone beyond the last epoch");
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw ConfigError("consistency: milestones must be strictly increasing");
  }
}

TeacherStudent init_teacher_student(const Checkpoint& f_ft) {
  const DownstreamConfig dc = downstream_config(f_ft);  // no head -> ConfigError
  TeacherStudent ts;
  ts.teacher = std::make_unique<DownstreamNet>(dc);
  ts.student = std::make_unique<DownstreamNet>(dc);
  load_all(f_ft, ts.teacher->params());
  load_all(f_ft, ts.student->params());
  FreezeSpec::uniform(ts.teacher->params(), false).apply(ts.teacher->params());
  FreezeSpec::mlp_and_head(ts.student->params()).apply(ts.student->params());
  return ts;
}

BatchSampler::BatchSampler(std::vector<int> idx, Rng* rng)
    : order_(std::move(idx)), rng_(rng) {
  if (order_.empty()) throw ArgumentError("batch sampler: empty pool");
  if (!rng_) throw ArgumentError("batch sampler: null rng");
  rng_->shuffle(order_);
}

std::vector<int> BatchSampler::next(int n) {
  if (n <= 0) throw ArgumentError("batch sampler: n must be positive");
  std::vector<int> out;
  out.reserve(n);
  while (static_cast<int>(out.size()) < n) {
    if (pos_ == order_.size()) {
      rng_->shuffle(order_);
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

BatchPlan build_batch(BatchSampler& labeled, BatchSampler& unlabeled, int b, int mu) {
  if (b <= 0) throw ConfigError("build_batch: labeled batch size must be positive");
  if (mu < 1) throw ConfigError("build_batch: mu must be >= 1");
  if (mu * b > unlabeled.pool_size())
    throw ConfigError("build_batch: mu*B exceeds the unlabeled pool");
  BatchPlan plan;
  plan.labeled = labeled.next(b);
  plan.unlabeled = unlabeled.next(mu * b);
  return plan;
}

static std::vector<Param*> backbone_params(DownstreamNet& net) {
  std::vector<Param*> out;
  for (Param* p : net.params())
    if (p->name.rfind("enc.", 0) == 0) out.push_back(p);
  return out;
}

ConsistencyResult consistency_train(const Checkpoint& f_ft, const SynthDataset& data,
                                    const std::vector<int>& labeled_idx,
                                    const std::vector<int>& unlabeled_idx,
                                    const ConsistencyConfig& cfg, MetricsLog* log) {
  cfg.validate();
  if (labeled_idx.empty()) throw ConfigError("consistency: no labeled examples");
  if (unlabeled_idx.empty()) throw ConfigError("consistency: empty unlabeled pool");
  if (data.val.empty()) throw ConfigError("consistency: empty validation split");
  for (int i : labeled_idx)
    if (i < 0 || i >= static_cast<int>(data.pool.size()))
      throw ArgumentError("consistency: labeled index out of range");
  for (int i : unlabeled_idx)
    if (i < 0 || i >= static_cast<int>(data.pool.size()))
      throw ArgumentError("consistency: unlabeled index out of range");

  TeacherStudent ts = init_teacher_student(f_ft);
  DownstreamNet& student = *ts.student;
  DownstreamNet& teacher = *ts.teacher;
  const bool cls = student.config().head.classes > 0;
  const DownstreamConfig dc = student.config();

  // Independent streams so the labeled-side draws are unaffected by whether
  // the unlabeled branch runs (lambda = 0 short-circuits it).
  Rng shuffle_l = Rng::derive(cfg.seed, "consist.shuffle-labeled");
  Rng shuffle_u = Rng::derive(cfg.seed, "consist.shuffle-unlabeled");
  Rng aug_l = Rng::derive(cfg.seed, "consist.aug-labeled");
  Rng aug_w = Rng::derive(cfg.seed, "consist.aug-weak");
  Rng aug_s = Rng::derive(cfg.seed, "consist.aug-strong");

  BatchSampler lab_sampler(labeled_idx, &shuffle_l);
  BatchSampler unlab_sampler(unlabeled_idx, &shuffle_u);

  Adam opt(student.params(), cfg.adam);
  const MultiStepLr sched(cfg.adam.lr, cfg.milestones, cfg.gamma);
  const AugPolicy eta = finetune_policy();
  const AugPolicy eta_w = weak_policy();
  const AugPolicy eta_s = strong_policy(cfg.n_aug);
  const std::vector<Param*> backbone = backbone_params(student);

  const long steps_per_epoch =
      (static_cast<long>(labeled_idx.size()) + cfg.batch - 1) / cfg.batch;

  ConsistencyResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    res.teacher_start.push_back(params_checksum(teacher.params()));
    opt.set_lr(sched.lr_at(epoch));

    double sup_sum = 0.0, cons_sum = 0.0, mask_sum = 0.0;
    for (long step = 0; step < steps_per_epoch; ++step) {
      const BatchPlan plan = build_batch(lab_sampler, unlab_sampler, cfg.batch, cfg.mu);

      // Supervised pass; backward must precede the unlabeled forward
      // because layer caches hold the most recent activations.
      std::vector<Tensor> lrows;
      lrows.reserve(plan.labeled.size());
      std::vector<int> y(plan.labeled.size());
      NT tgt({static_cast<int>(plan.labeled.size()), 1});
      for (std::size_t i = 0; i < plan.labeled.size(); ++i) {
        const ExampleRec& r = data.pool[plan.labeled[i]];
        push_view(lrows, data.patch_of(r, cfg.patch), eta, aug_l);
        y[i] = r.class_id;
        tgt.at2(static_cast<int>(i), 0) = static_cast<double>(r.cellularity);
      }
      student.zero_grad();
      const NT lout = student.forward(stack_batch(lrows));
      NT dl;
      const double ls = cls ? softmax_ce(lout, y, &dl) : mse_elems(lout, tgt, &dl);
      student.backward(dl);

      double lc = 0.0, mf = 1.0;
      if (cfg.lambda > 0.0) {
        std::vector<Tensor> wrows, srows;
        wrows.reserve(plan.unlabeled.size());
        srows.reserve(plan.unlabeled.size());
        for (int idx : plan.unlabeled) {
          const Image img = data.patch_of(data.pool[idx], cfg.patch);
          push_view(wrows, img, eta_w, aug_w);
          push_view(srows, img, eta_s, aug_s);
        }
        const NT q = teacher.predict(stack_batch(wrows));
        const NT sout = student.forward(stack_batch(srows));
        NT du;
        if (cls)
          lc = consistency_cls(q, sout, cfg.tau_c, cfg.pseudo, cfg.eps_ls, &du, &mf);
        else
          lc = consistency_reg(q, sout, &du);
        for (double& v : du.v) v *= cfg.lambda;
        student.backward(du);
      }
      opt.step();
      sup_sum += ls;
      cons_sum += lc;
      mask_sum += mf;
    }
    const double denom = static_cast<double>(steps_per_epoch);
    res.sup_loss.push_back(sup_sum / denom);
    res.cons_loss.push_back(cons_sum / denom);
    res.mask_frac.push_back(mask_sum / denom);

    const EvalResult ev = eval_downstream(student, data, data.val, cfg.patch, cfg.batch);
    res.val_loss.push_back(ev.loss);
    res.val_acc.push_back(ev.acc);

    if (log) {
      log->log(epoch, "train", "loss_sup", res.sup_loss.back());
      log->log(epoch, "train", "loss_cons", res.cons_loss.back());
      log->log(epoch, "train", "loss_total",
               total_loss(res.sup_loss.back(), res.cons_loss.back(), cfg.lambda));
      log->log(epoch, "train", "mask_frac", res.mask_frac.back());
      log->log(epoch, "val", "loss", ev.loss);
      if (cls) log->log(epoch, "val", "acc", ev.acc);
    }

    const double metric = cls ? ev.acc : ev.loss;
    const bool better = res.best_epoch < 0 ||
                        (cls ? metric > res.best_val_metric : metric < res.best_val_metric);
    if (better) {
      res.best_val_metric = metric;
      res.best_epoch = epoch;
      Checkpoint ck;
      ck.kind = "consist";
      describe_downstream(ck, dc);
      ck.rng_state = aug_l.state();
      store_params(ck, student.params());
      ck.stats["best_epoch"] = {static_cast<double>(epoch)};
      ck.stats["val_loss"] = {ev.loss};
      ck.stats["val_acc"] = {ev.acc};
      res.best = std::move(ck);
    }

    res.teacher_end.push_back(params_checksum(teacher.params()));
    res.student_end.push_back(params_checksum(student.params()));
    res.student_backbone.push_back(params_checksum(backbone));

    // Epoch barrier: the student becomes the next teacher (full copy).
    copy_params(student.params(), teacher.params());
  }
  return res;
}

}  // namespace rsp
