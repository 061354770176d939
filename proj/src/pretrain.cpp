#include "rsp/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "rsp/losses.hpp"

namespace rsp {

// ---- shared training utilities ----

MetricsLog::MetricsLog(const std::string& path, std::string run_id)
    : os_(std::make_shared<std::ofstream>(path, std::ios::app)), run_id_(std::move(run_id)) {
  if (!*os_) throw IoError("metrics log: cannot open " + path);
}

void MetricsLog::log(int epoch, const std::string& split, const std::string& metric,
                     double value) {
  if (!os_) return;
  (*os_) << run_id_ << ' ' << epoch << ' ' << split << ' ' << metric << ' '
         << std::setprecision(17) << value << '\n';
  os_->flush();
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("metrics log: cannot open " + path);
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    MetricRecord r;
    if (!(ls >> r.run_id >> r.epoch >> r.split >> r.metric >> r.value))
      throw IntegrityError("metrics log: malformed line '" + line + "'");
    out.push_back(std::move(r));
  }
  return out;
}

NT stack_batch(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ArgumentError("stack_batch: no rows");
  const std::vector<int>& s0 = xs[0].shape;
  if (s0.size() != 3) throw ArgumentError("stack_batch: rows must be [C,H,W]");
  NT out({static_cast<int>(xs.size()), s0[0], s0[1], s0[2]});
  std::size_t off = 0;
  for (const Tensor& x : xs) {
    if (x.shape != s0) throw ArgumentError("stack_batch: row shape mismatch");
    for (float v : x.v) out.v[off++] = v;
  }
  return out;
}

void push_view(std::vector<Tensor>& rows, const Image& img, const AugPolicy& policy,
               Rng& rng) {
  rows.push_back(apply_policy(to_tensor(img), policy, rng));
}

int select_min(const std::vector<double>& vals) {
  if (vals.empty()) throw ArgumentError("select_min: empty");
  return static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
}

int select_max(const std::vector<double>& vals) {
  if (vals.empty()) throw ArgumentError("select_max: empty");
  return static_cast<int>(std::max_element(vals.begin(), vals.end()) - vals.begin());
}

int argmax_row(const NT& m, int row) {
  const int c = m.dim(1);
  int best = 0;
  for (int j = 1; j < c; ++j)
    if (m.at2(row, j) > m.at2(row, best)) best = j;
  return best;
}

EvalResult eval_downstream(DownstreamNet& net, const SynthDataset& data,
                           const std::vector<ExampleRec>& recs, int patch, int batch) {
  if (recs.empty()) throw ArgumentError("eval_downstream: empty split");
  if (batch <= 0) throw ArgumentError("eval_downstream: batch must be positive");
  const bool cls = net.config().head.classes > 0;
  const long n = static_cast<long>(recs.size());
  double loss_sum = 0.0;
  long correct = 0;
  for (long b0 = 0; b0 < n; b0 += batch) {
    const int bn = static_cast<int>(std::min<long>(batch, n - b0));
    std::vector<Tensor> rows;
    rows.reserve(bn);
    for (int i = 0; i < bn; ++i)
      rows.push_back(to_tensor(data.patch_of(recs[b0 + i], patch)));
    const NT x = stack_batch(rows);
    const NT out = net.forward(x);
    for (int i = 0; i < bn; ++i) {
      const ExampleRec& r = recs[b0 + i];
      if (cls) {
        // Per-sample CE keeps the accumulation batch-size independent.
        NT row({1, out.dim(1)});
        for (int j = 0; j < out.dim(1); ++j) row.at2(0, j) = out.at2(i, j);
        loss_sum += softmax_ce(row, {r.class_id});
        if (argmax_row(out, i) == r.class_id) ++correct;
      } else {
        const double d = out.at2(i, 0) - static_cast<double>(r.cellularity);
        loss_sum += d * d;
      }
    }
  }
  EvalResult res;
  res.loss = loss_sum / static_cast<double>(n);
  res.acc = cls ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return res;
}

PatchPool sample_patch_pool(const std::vector<SynthPyramid>& pyrs, int n, int patch,
                            int level, Rng& rng) {
  if (pyrs.empty()) throw ArgumentError("sample_patch_pool: no pyramids");
  if (n <= 0 || patch <= 0) throw ArgumentError("sample_patch_pool: sizes must be positive");
  PatchPool pool;
  pool.patches.reserve(n);
  for (int i = 0; i < n; ++i) {
    const PyramidImage& p = pyrs[i % pyrs.size()].pyr;
    if (level < 0 || level >= p.num_levels())
      throw ArgumentError("sample_patch_pool: level out of range");
    const Image& lv = p.levels[level];
    if (lv.w < patch || lv.h < patch)
      throw SamplingError("sample_patch_pool: patch exceeds level bounds");
    const int ds = static_cast<int>(p.downsample[level]);
    const int half = patch / 2;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const int lx = half + rng.uniform_index(lv.w - patch + 1);
      const int ly = half + rng.uniform_index(lv.h - patch + 1);
      if (p.has_tissue_mask()) {
        const Image& m = p.tissue[level];
        long bg = 0;
        for (int y = ly - half; y < ly - half + patch; ++y)
          for (int x = lx - half; x < lx - half + patch; ++x)
            if (m.at(y, x, 0) == 0) ++bg;
        if (static_cast<double>(bg) / (static_cast<double>(patch) * patch) > 0.90) continue;
      }
      pool.patches.push_back(extract_patch(p, lx * ds, ly * ds, patch, level));
      placed = true;
    }
    if (!placed)
      throw SamplingError("sample_patch_pool: no tissue center found after 64 tries");
  }
  return pool;
}

TuplePool sample_tuple_pool(const std::vector<SynthPyramid>& pyrs, int n, int patch,
                            std::array<int, 3> level_triple, Rng& rng) {
  if (pyrs.empty()) throw ArgumentError("sample_tuple_pool: no pyramids");
  if (n <= 0) throw ArgumentError("sample_tuple_pool: n must be positive");
  TuplePool pool;
  pool.tuples.reserve(n);
  for (int i = 0; i < n; ++i)
    pool.tuples.push_back(
        sample_concentric_tuple(pyrs[i % pyrs.size()].pyr, rng, patch, level_triple));
  return pool;
}

Checkpoint random_init_checkpoint(const EncoderConfig& enc, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "random-init");
  Encoder e(enc);
  e.init(rng);
  Checkpoint ck;
  ck.kind = "random";
  describe_encoder(ck, enc);
  ck.rng_state = rng.state();
  store_params(ck, e.params());
  return ck;
}

// ---- pretext training ----

void PretrainConfig::validate() const {
  if (epochs <= 0 || batch <= 0 || patch <= 0)
    throw ConfigError("pretrain: epochs, batch and patch must be positive");
  if (sgd.lr <= 0 || sgd.momentum < 0 || sgd.weight_decay < 0)
    throw ConfigError("pretrain: bad sgd config");
  if (lookahead.k < 1 || lookahead.alpha <= 0 || lookahead.alpha > 1)
    throw ConfigError("pretrain: bad lookahead config");
}

PretrainResult rsp_pretrain(const TuplePool& train, const TuplePool& val,
                            const PretrainConfig& cfg, MetricsLog* log) {
  cfg.validate();
  if (train.tuples.empty() || val.tuples.empty())
    throw ConfigError("pretrain: empty dataset");

  Rng init_rng = Rng::derive(cfg.seed, "pretrain.init");
  Rng label_rng = Rng::derive(cfg.seed, "pretrain.label");
  Rng aug_rng = Rng::derive(cfg.seed, "pretrain.aug");
  Rng shuffle_rng = Rng::derive(cfg.seed, "pretrain.shuffle");
  Rng val_rng = Rng::derive(cfg.seed, "pretrain.val-label");

  RspNet net(cfg.enc);
  net.init(init_rng);
  Lookahead opt(net.params(), cfg.sgd, cfg.lookahead);
  const AugPolicy aug = pretrain_policy();

  // Validation labels are drawn once so the selection metric is stable.
  std::vector<int> vlabels(val.tuples.size());
  for (int& l : vlabels) l = val_rng.uniform_index(6);

  PretrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<int> order(train.tuples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      std::vector<Tensor> rows;
      rows.reserve(3 * bn);
      std::vector<int> y(bn);
      for (int i = 0; i < bn; ++i) {
        const PatchTuple& t = train.tuples[order[b0 + i]];
        const int lab = label_rng.uniform_index(6);
        ++res.label_counts[lab];
        y[i] = lab;
        const PermutedSequence s = permute_tuple(t, lab);
        for (int slot = 0; slot < 3; ++slot) push_view(rows, s.patches[slot], aug, aug_rng);
      }
      const NT x = stack_batch(rows);
      net.zero_grad();
      const NT logits = net.forward(x);
      NT dlogits;
      loss_sum += softmax_ce(logits, y, &dlogits) * bn;
      for (int i = 0; i < bn; ++i)
        if (argmax_row(logits, i) == y[i]) ++correct;
      seen += bn;
      net.backward(dlogits);
      opt.step();
    }
    res.train_loss.push_back(loss_sum / static_cast<double>(seen));
    res.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(seen));

    double vloss_sum = 0.0;
    long vcorrect = 0;
    for (std::size_t b0 = 0; b0 < val.tuples.size(); b0 += cfg.batch) {
      const int bn =
          static_cast<int>(std::min<std::size_t>(cfg.batch, val.tuples.size() - b0));
      std::vector<Tensor> rows;
      rows.reserve(3 * bn);
      std::vector<int> y(bn);
      for (int i = 0; i < bn; ++i) {
        const PermutedSequence s =
            permute_tuple(val.tuples[b0 + i], vlabels[b0 + i]);
        y[i] = vlabels[b0 + i];
        for (int slot = 0; slot < 3; ++slot) rows.push_back(to_tensor(s.patches[slot]));
      }
      const NT logits = net.forward(stack_batch(rows));
      vloss_sum += softmax_ce(logits, y) * bn;
      for (int i = 0; i < bn; ++i)
        if (argmax_row(logits, i) == y[i]) ++vcorrect;
    }
    const double vloss = vloss_sum / static_cast<double>(val.tuples.size());
    const double vacc = static_cast<double>(vcorrect) / static_cast<double>(val.tuples.size());
    res.val_loss.push_back(vloss);
    res.val_acc.push_back(vacc);

    if (log) {
      log->log(epoch, "train", "loss", res.train_loss.back());
      log->log(epoch, "train", "acc", res.train_acc.back());
      log->log(epoch, "val", "loss", vloss);
      log->log(epoch, "val", "acc", vacc);
    }

    if (vloss < res.best_val_loss) {
      res.best_val_loss = vloss;
      res.best_epoch = epoch;
      Checkpoint ck;
      ck.kind = "rsp";
      describe_encoder(ck, cfg.enc);
      ck.rsp_pathway = true;
      ck.feature_dim = RspHead::kConcat;
      ck.rng_state = label_rng.state();
      store_params(ck, net.params());
      ck.stats["best_epoch"] = {static_cast<double>(epoch)};
      ck.stats["val_loss"] = {vloss};
      ck.stats["val_acc"] = {vacc};
      res.best = std::move(ck);
    }
  }
  return res;
}

}  // namespace rsp
