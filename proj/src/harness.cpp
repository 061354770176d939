#include "rsp/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rsp/metrics.hpp"
#include "rsp/plot.hpp"

namespace rsp {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- manifest serialization ----

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["run_id"] = m.run_id;
  j["kind"] = m.kind;
  j["seed"] = m.seed;
  j["code_version"] = m.code_version;
  j["config"] = m.config;
  j["inputs"] = json::array();
  for (const auto& in : m.inputs)
    j["inputs"].push_back({{"role", in.role}, {"run_id", in.run_id}, {"hash", in.hash}});
  j["output_hash"] = m.output_hash;
  j["metrics"] = m.metrics;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.code_version = j.at("code_version").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    for (const auto& in : j.at("inputs"))
      m.inputs.push_back({in.at("role").get<std::string>(), in.at("run_id").get<std::string>(),
                          in.at("hash").get<std::string>()});
    m.output_hash = j.at("output_hash").get<std::string>();
    m.metrics = j.at("metrics").get<std::map<std::string, double>>();
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
}

// ---- store ----

namespace {

// Advisory exclusive lock on <dir>/.lock, held for the duration of a write.
class StoreLock {
 public:
  explicit StoreLock(const std::string& dir) {
    fd_ = ::open((dir + "/.lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw IoError("cannot open store lock in '" + dir + "'");
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw IoError("cannot lock store '" + dir + "'");
    }
  }
  ~StoreLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  int fd_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

Store::Store(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create store directory '" + dir_ + "': " + ec.message());
}

std::string Store::path(const std::string& run_id, const std::string& ext) const {
  return dir_ + "/" + run_id + ext;
}

bool Store::has(const std::string& run_id) const {
  return fs::exists(path(run_id, ".manifest"));
}

RunManifest Store::load(const std::string& run_id) const {
  return manifest_from_json(read_file(path(run_id, ".manifest")));
}

void Store::save(const RunManifest& m) const {
  StoreLock lock(dir_);
  write_file_atomic(path(m.run_id, ".manifest"), manifest_to_json(m));
}

std::vector<RunManifest> Store::all() const {
  std::vector<RunManifest> out;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (e.path().extension() == ".manifest")
      out.push_back(manifest_from_json(read_file(e.path().string())));
  }
  std::sort(out.begin(), out.end(),
            [](const RunManifest& a, const RunManifest& b) { return a.run_id < b.run_id; });
  return out;
}

void Store::save_ckpt(const std::string& run_id, const Checkpoint& ckpt) const {
  StoreLock lock(dir_);
  const std::string final = path(run_id, ".ckpt");
  const std::string tmp = final + ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, final);
}

Checkpoint Store::load_ckpt(const RunManifest& m) const {
  Checkpoint ckpt = load_checkpoint(path(m.run_id, ".ckpt"));
  if (hex64(checkpoint_hash(ckpt)) != m.output_hash)
    throw IntegrityError("checkpoint of run " + m.run_id + " does not match its manifest");
  return ckpt;
}

// ---- seeds ----

const std::vector<std::string> kSeedStreamNames = {
    "sampling", "augmentation-weak", "augmentation-strong", "init", "shuffle"};

SeedStreams seed_all(std::uint64_t seed) {
  return {Rng::derive(seed, "sampling"), Rng::derive(seed, "augmentation-weak"),
          Rng::derive(seed, "augmentation-strong"), Rng::derive(seed, "init"),
          Rng::derive(seed, "shuffle")};
}

// ---- config -> module configs ----

namespace {

TaskMode task_mode(const Config& c) {
  const std::string t = c.get("task");
  if (t == "regression") return TaskMode::regression;
  if (t == "classification") return TaskMode::classification;
  throw ConfigError("task must be regression or classification, got '" + t + "'");
}

}  // namespace

SynthDataConfig data_config(const Config& c) {
  GenParams gp;
  gp.size = c.get_int("data.size");
  gp.levels = c.get_int("data.levels");
  gp.mode = task_mode(c);
  gp.n_classes = c.get_int("data.n_classes");
  gp.region = c.get_int("data.region");
  gp.mod_amp = c.get_double("data.mod_amp");
  gp.density_max = c.get_double("data.density_max");
  gp.tex_amp = c.get_double("data.tex_amp");
  SynthDataConfig sd;
  sd.gen = gp;
  sd.pretrain_pyramids = c.get_int("data.pretrain_pyramids");
  sd.finetune_pyramids = c.get_int("data.finetune_pyramids");
  sd.test_pyramids = c.get_int("data.test_pyramids");
  sd.examples_per_pyramid = c.get_int("data.examples_per_pyramid");
  sd.test_per_pyramid = c.get_int("data.test_per_pyramid");
  sd.patch_size = c.get_int("data.patch");
  sd.val_frac = c.get_double("data.val_frac");
  sd.allow_small = c.get_bool("data.allow_small");
  return sd;
}

EncoderConfig encoder_config(const Config& c) {
  EncoderConfig e;
  e.arch = c.get("enc.arch");
  e.width = c.get_int("enc.width");
  e.out_dim = c.get_int("enc.out_dim");
  return e;
}

PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.epochs = c.get_int("pretrain.epochs");
  p.batch = c.get_int("pretrain.batch");
  p.sgd.lr = c.get_double("pretrain.lr");
  p.sgd.momentum = c.get_double("pretrain.momentum");
  p.sgd.weight_decay = c.get_double("pretrain.weight_decay");
  p.lookahead.k = c.get_int("pretrain.lookahead_k");
  p.lookahead.alpha = c.get_double("pretrain.lookahead_alpha");
  p.enc = encoder_config(c);
  p.patch = c.get_int("pretrain.patch");
  p.seed = c.get_u64("seed");
  return p;
}

MocoConfig moco_config(const Config& c) {
  MocoConfig m;
  m.epochs = c.get_int("moco.epochs");
  m.batch = c.get_int("moco.batch");
  m.queue = c.get_int("moco.queue");
  m.tau = c.get_double("moco.tau");
  m.m = c.get_double("moco.m");
  m.sgd.lr = c.get_double("moco.lr");
  m.enc = encoder_config(c);
  m.patch = c.get_int("pretrain.patch");
  m.seed = c.get_u64("seed");
  const double crop_min = c.get_double("moco.crop_min");
  m.aug.crop_min = crop_min;
  for (auto& t : m.aug.transforms)
    if (t.kind == Tf::crop_resize) t.lo = crop_min;
  return m;
}

VaeTrainConfig vae_config(const Config& c) {
  VaeTrainConfig v;
  v.epochs = c.get_int("vae.epochs");
  v.batch = c.get_int("vae.batch");
  v.adam.lr = c.get_double("vae.lr");
  v.vae.enc = encoder_config(c);
  v.vae.latent = c.get_int("vae.latent");
  v.vae.patch = c.get_int("pretrain.patch");
  v.seed = c.get_u64("seed");
  return v;
}

FinetuneConfig finetune_config(const Config& c) {
  FinetuneConfig f;
  f.epochs = c.get_int("finetune.epochs");
  f.batch = c.get_int("finetune.batch");
  f.adam.lr = c.get_double("finetune.lr");
  f.adam.beta1 = c.get_double("finetune.beta1");
  f.adam.beta2 = c.get_double("finetune.beta2");
  f.adam.weight_decay = c.get_double("finetune.weight_decay");
  f.milestones = c.get_int_list("finetune.milestones");
  f.gamma = c.get_double("finetune.gamma");
  f.mode = task_mode(c);
  f.n_classes = c.get_int("data.n_classes");
  f.h1 = c.get_int("finetune.h1");
  f.h2 = c.get_int("finetune.h2");
  f.patch = c.get_int("finetune.patch");
  f.seed = c.get_u64("seed");
  return f;
}

ConsistencyConfig consistency_config(const Config& c) {
  ConsistencyConfig k;
  k.lambda = c.get_double("consist.lambda");
  k.mu = c.get_int("consist.mu");
  k.batch = c.get_int("consist.batch");
  k.epochs = c.get_int("consist.epochs");
  k.tau_c = c.get_double("consist.tau_c");
  const std::string pseudo = c.get("consist.pseudo");
  if (pseudo == "hard")
    k.pseudo = PseudoMode::hard;
  else if (pseudo == "soft")
    k.pseudo = PseudoMode::soft;
  else
    throw ConfigError("consist.pseudo must be hard or soft, got '" + pseudo + "'");
  k.eps_ls = c.get_double("consist.eps_ls");
  k.n_aug = c.get_int("consist.n_aug");
  k.adam.lr = c.get_double("consist.lr");
  k.adam.beta1 = c.get_double("consist.beta1");
  k.adam.beta2 = c.get_double("consist.beta2");
  k.adam.weight_decay = c.get_double("consist.weight_decay");
  k.milestones = c.get_int_list("consist.milestones");
  k.gamma = c.get_double("consist.gamma");
  k.patch = c.get_int("consist.patch");
  k.seed = c.get_u64("seed");
  return k;
}

// ---- digests and run ids ----

namespace {

std::uint64_t chain_bytes(std::uint64_t h, const void* p, std::size_t n) {
  return fnv1a64(p, n, h);
}

template <typename T>
std::uint64_t chain_pod(std::uint64_t h, T v) {
  return chain_bytes(h, &v, sizeof(v));
}

std::uint64_t chain_image(std::uint64_t h, const Image& img) {
  h = chain_pod(h, img.h);
  h = chain_pod(h, img.w);
  h = chain_pod(h, img.c);
  if (!img.px.empty()) h = chain_bytes(h, img.px.data(), img.px.size());
  return h;
}

std::uint64_t chain_pyramids(std::uint64_t h, const std::vector<SynthPyramid>& pyrs) {
  for (const auto& p : pyrs) {
    for (const auto& lv : p.pyr.levels) h = chain_image(h, lv);
    h = chain_image(h, p.cell_mask);
    h = chain_image(h, p.class_map);
  }
  return h;
}

std::uint64_t chain_recs(std::uint64_t h, const std::vector<ExampleRec>& recs) {
  for (const auto& r : recs) {
    h = chain_pod(h, r.id);
    h = chain_pod(h, r.pyramid);
    h = chain_pod(h, r.cx);
    h = chain_pod(h, r.cy);
    h = chain_pod(h, r.level);
    h = chain_pod(h, r.class_id);
    h = chain_pod(h, r.cellularity);
    h = chain_bytes(h, r.split.data(), r.split.size());
    h = chain_pod(h, r.alpha_mask);
  }
  return h;
}

}  // namespace

std::string dataset_digest(const SynthDataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = chain_pyramids(h, data.pretrain_pyramids);
  h = chain_pyramids(h, data.finetune_pyramids);
  h = chain_pyramids(h, data.test_pyramids);
  h = chain_recs(h, data.pool);
  h = chain_recs(h, data.val);
  h = chain_recs(h, data.test);
  return hex64(h);
}

namespace {

// Resolved keys matching any of the given prefixes (exact key or "ns." start).
std::map<std::string, std::string> config_subset(const Config& c,
                                                 const std::vector<std::string>& prefixes) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : c.resolved()) {
    for (const auto& p : prefixes) {
      const bool match = (k == p) || (!p.empty() && p.back() == '.' && k.rfind(p, 0) == 0);
      if (match) {
        out[k] = v;
        break;
      }
    }
  }
  return out;
}

std::string derive_run_id(const std::string& kind, std::uint64_t seed,
                          const std::map<std::string, std::string>& cfg,
                          const std::vector<ManifestInput>& inputs) {
  std::string text = kind + "\n" + std::to_string(seed) + "\n";
  for (const auto& [k, v] : cfg) text += k + "=" + v + "\n";
  for (const auto& in : inputs) text += in.role + ":" + in.run_id + ":" + in.hash + "\n";
  return hex64(fnv1a64(text));
}

std::string fmt_alpha(double alpha) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", alpha);
  return buf;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// Cache probe shared by the stages: a hit requires the manifest to load and
// the run's artifact to verify; anything else reports and falls back to a
// fresh run.
struct CacheProbe {
  bool hit = false;
  bool repaired = false;
  RunManifest m;
};

CacheProbe probe_cache(const Store& store, const std::string& run_id, bool has_ckpt,
                       const std::string& report_ext = "") {
  CacheProbe out;
  if (!store.has(run_id)) return out;
  try {
    out.m = store.load(run_id);
    if (has_ckpt) store.load_ckpt(out.m);
    if (!report_ext.empty()) {
      const std::string text = read_file(store.path(run_id, report_ext));
      if (hex64(fnv1a64(text)) != out.m.output_hash)
        throw IntegrityError("report of run " + run_id + " does not match its manifest");
    }
    out.hit = true;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "store: run %s failed verification (%s); re-running\n", run_id.c_str(),
                 e.what());
    out.repaired = true;
  }
  return out;
}

// A re-run must not append to a stale metrics log.
MetricsLog fresh_log(const Store& store, const std::string& run_id) {
  const std::string p = store.path(run_id, ".metrics");
  std::error_code ec;
  fs::remove(p, ec);
  return MetricsLog(p, run_id);
}

const ManifestInput& find_input(const RunManifest& m, const std::string& role) {
  for (const auto& in : m.inputs)
    if (in.role == role) return in;
  throw IoError("manifest " + m.run_id + " has no '" + role + "' input");
}

void check_method(const std::string& method) {
  if (method != "rsp" && method != "moco" && method != "vae" && method != "random")
    throw ConfigError("unknown pretraining method '" + method + "'");
}

}  // namespace

// ---- stages ----

StageResult gen_data(const Config& c, Store& store) {
  const std::uint64_t seed = c.get_u64("seed");
  const auto sub = config_subset(c, {"task", "data."});
  const std::string id = derive_run_id("gen-data", seed, sub, {});
  auto probe = probe_cache(store, id, false);
  if (probe.hit) return {id, true, false, probe.m.metrics};

  const SynthDataset data = build_synth_dataset(seed, data_config(c));
  RunManifest m;
  m.run_id = id;
  m.kind = "gen-data";
  m.seed = seed;
  m.code_version = kCodeVersion;
  m.config = sub;
  m.output_hash = dataset_digest(data);
  m.metrics["n_pool"] = static_cast<double>(data.pool.size());
  m.metrics["n_val"] = static_cast<double>(data.val.size());
  m.metrics["n_test"] = static_cast<double>(data.test.size());
  store.save(m);
  return {id, false, probe.repaired, m.metrics};
}

SynthDataset load_data(const Store& store, const std::string& data_run) {
  const RunManifest m = store.load(data_run);
  if (m.kind != "gen-data")
    throw ArgumentError("run " + data_run + " is a " + m.kind + " run, not gen-data");
  Config c = default_config();
  for (const auto& [k, v] : m.config)
    if (c.has(k)) c.set_override(k, v);
  SynthDataset data = build_synth_dataset(m.seed, data_config(c));
  if (dataset_digest(data) != m.output_hash)
    throw IntegrityError("dataset of run " + data_run + " does not match its manifest");
  return data;
}

StageResult pretrain_stage(const Config& c, const std::string& method,
                           const std::string& data_run, Store& store) {
  check_method(method);
  const std::uint64_t seed = c.get_u64("seed");
  const RunManifest dman = store.load(data_run);

  std::vector<std::string> prefixes{"enc."};
  if (method == "rsp") prefixes.push_back("pretrain.");
  if (method == "moco") {
    prefixes.push_back("moco.");
    prefixes.push_back("pretrain.patch");
  }
  if (method == "vae") {
    prefixes.push_back("vae.");
    prefixes.push_back("pretrain.patch");
  }
  auto sub = config_subset(c, prefixes);
  sub["method"] = method;
  sub["streams"] = join(kSeedStreamNames, ",");
  const std::vector<ManifestInput> inputs{{"data", data_run, dman.output_hash}};
  const std::string id = derive_run_id("pretrain", seed, sub, inputs);
  auto probe = probe_cache(store, id, true);
  if (probe.hit) return {id, true, false, probe.m.metrics};

  const SynthDataset data = load_data(store, data_run);
  SeedStreams streams = seed_all(seed);
  RunManifest m;
  m.run_id = id;
  m.kind = "pretrain";
  m.seed = seed;
  m.code_version = kCodeVersion;
  m.config = sub;
  m.inputs = inputs;

  Checkpoint ckpt;
  if (method == "random") {
    ckpt = random_init_checkpoint(encoder_config(c), seed);
  } else if (method == "rsp") {
    PretrainConfig pc = pretrain_config(c);
    const int top = data_config(c).gen.levels - 1;
    const std::array<int, 3> triple{top, top - 1, top - 2};
    const TuplePool train = sample_tuple_pool(data.pretrain_pyramids,
                                              c.get_int("pretrain.tuples"), pc.patch, triple,
                                              streams.sampling);
    const TuplePool val = sample_tuple_pool(data.pretrain_pyramids,
                                            c.get_int("pretrain.val_tuples"), pc.patch, triple,
                                            streams.sampling);
    MetricsLog log = fresh_log(store, id);
    const PretrainResult res = rsp_pretrain(train, val, pc, &log);
    ckpt = res.best;
    m.metrics["best_epoch"] = res.best_epoch;
    m.metrics["best_val_loss"] = res.best_val_loss;
    m.metrics["best_val_acc"] = res.val_acc[static_cast<std::size_t>(res.best_epoch)];
  } else if (method == "moco") {
    MocoConfig mc = moco_config(c);
    const PatchPool pool = sample_patch_pool(data.pretrain_pyramids, c.get_int("moco.pool"),
                                             mc.patch, 0, streams.sampling);
    MetricsLog log = fresh_log(store, id);
    const MocoResult res = moco_pretrain(pool, mc, &log);
    ckpt = res.ckpt;
    m.metrics["first_loss"] = res.epoch_loss.front();
    m.metrics["last_loss"] = res.epoch_loss.back();
  } else {  // vae
    VaeTrainConfig vc = vae_config(c);
    const PatchPool pool = sample_patch_pool(data.pretrain_pyramids, c.get_int("vae.pool"),
                                             vc.vae.patch, 0, streams.sampling);
    MetricsLog log = fresh_log(store, id);
    const VaeResult res = vae_pretrain(pool, vc, &log);
    ckpt = res.ckpt;
    m.metrics["first_loss"] = res.epoch_loss.front();
    m.metrics["last_loss"] = res.epoch_loss.back();
  }

  ckpt.manifest = id;
  store.save_ckpt(id, ckpt);
  m.output_hash = hex64(checkpoint_hash(ckpt));
  store.save(m);
  return {id, false, probe.repaired, m.metrics};
}

StageResult finetune_stage(const Config& c, const std::string& method, double alpha,
                           const std::string& data_run, Store& store) {
  alpha_index(alpha);  // rejects anything but the declared fractions
  const std::uint64_t seed = c.get_u64("seed");
  const StageResult pre = pretrain_stage(c, method, data_run, store);
  const RunManifest pman = store.load(pre.run_id);
  const RunManifest dman = store.load(data_run);

  auto sub = config_subset(c, {"task", "finetune.", "data.n_classes"});
  sub["method"] = method;
  sub["alpha"] = fmt_alpha(alpha);
  const std::vector<ManifestInput> inputs{{"data", data_run, dman.output_hash},
                                          {"init", pre.run_id, pman.output_hash}};
  const std::string id = derive_run_id("finetune", seed, sub, inputs);
  auto probe = probe_cache(store, id, true);
  if (probe.hit) return {id, true, false, probe.m.metrics};

  const SynthDataset data = load_data(store, data_run);
  const DatasetSplit split = make_splits(static_cast<int>(data.pool.size()), alpha, seed);
  FinetuneConfig fc = finetune_config(c);
  const Checkpoint init = store.load_ckpt(pman);
  MetricsLog log = fresh_log(store, id);
  const FinetuneResult res = finetune(init, data, split.labeled, fc, &log);

  Checkpoint best = res.best;
  best.manifest = id;
  store.save_ckpt(id, best);

  RunManifest m;
  m.run_id = id;
  m.kind = "finetune";
  m.seed = seed;
  m.code_version = kCodeVersion;
  m.config = sub;
  m.inputs = inputs;
  m.output_hash = hex64(checkpoint_hash(best));
  m.metrics["best_epoch"] = res.best_epoch;
  m.metrics["best_val_metric"] = res.best_val_metric;
  m.metrics["n_labeled"] = static_cast<double>(split.labeled.size());
  store.save(m);
  return {id, false, probe.repaired, m.metrics};
}

StageResult consist_stage(const Config& c, const std::string& ft_run, Store& store) {
  const std::uint64_t seed = c.get_u64("seed");
  const RunManifest fman = store.load(ft_run);
  if (fman.kind != "finetune")
    throw ArgumentError("consistency training needs a finetune run, got " + fman.kind);
  const ManifestInput& data_in = find_input(fman, "data");
  const RunManifest dman = store.load(data_in.run_id);
  const std::string alpha_s = fman.config.count("alpha") ? fman.config.at("alpha") : "1.00";
  const double alpha = std::stod(alpha_s);

  auto sub = config_subset(c, {"task", "consist."});
  sub["alpha"] = alpha_s;
  const std::vector<ManifestInput> inputs{{"data", data_in.run_id, dman.output_hash},
                                          {"finetune", ft_run, fman.output_hash}};
  const std::string id = derive_run_id("consist", seed, sub, inputs);
  auto probe = probe_cache(store, id, true);
  if (probe.hit) return {id, true, false, probe.m.metrics};

  const SynthDataset data = load_data(store, data_in.run_id);
  // Same labeled subset the fine-tune stage trained on; the whole pool is
  // the unlabeled side.
  const DatasetSplit split = make_splits(static_cast<int>(data.pool.size()), alpha, fman.seed);
  ConsistencyConfig cc = consistency_config(c);
  const Checkpoint f_ft = store.load_ckpt(fman);
  MetricsLog log = fresh_log(store, id);
  const ConsistencyResult res =
      consistency_train(f_ft, data, split.labeled, split.unlabeled, cc, &log);

  Checkpoint best = res.best;
  best.manifest = id;
  store.save_ckpt(id, best);

  RunManifest m;
  m.run_id = id;
  m.kind = "consist";
  m.seed = seed;
  m.code_version = kCodeVersion;
  m.config = sub;
  m.inputs = inputs;
  m.output_hash = hex64(checkpoint_hash(best));
  m.metrics["best_epoch"] = res.best_epoch;
  m.metrics["best_val_metric"] = res.best_val_metric;
  m.metrics["final_cons_loss"] = res.cons_loss.back();
  store.save(m);
  return {id, false, probe.repaired, m.metrics};
}

StageResult eval_stage(const std::string& model_run, Store& store) {
  const RunManifest mman = store.load(model_run);
  if (mman.kind != "finetune" && mman.kind != "consist")
    throw ArgumentError("eval needs a finetune or consist run, got " + mman.kind);
  const ManifestInput& data_in = find_input(mman, "data");
  const RunManifest dman = store.load(data_in.run_id);

  // The model's own training snapshot is authoritative for how to feed it.
  const std::string patch_key = mman.kind == "finetune" ? "finetune.patch" : "consist.patch";
  const int patch = std::stoi(mman.config.at(patch_key));
  const std::string task = mman.config.at("task");

  std::map<std::string, std::string> sub{{"task", task}, {"patch", std::to_string(patch)}};
  const std::vector<ManifestInput> inputs{{"model", model_run, mman.output_hash},
                                          {"data", data_in.run_id, dman.output_hash}};
  const std::string id = derive_run_id("eval", mman.seed, sub, inputs);
  auto probe = probe_cache(store, id, false, ".report");
  if (probe.hit) return {id, true, false, probe.m.metrics};

  const SynthDataset data = load_data(store, data_in.run_id);
  const Checkpoint ckpt = store.load_ckpt(mman);
  DownstreamNet net(downstream_config(ckpt));
  load_all(ckpt, net.params());

  // Batched, augmentation-free test predictions.
  const AugPolicy identity{};
  Rng dummy(0);
  std::vector<double> y_hat;
  std::vector<int> pred_class;
  std::vector<std::vector<double>> probs;
  const int bs = 64;
  for (std::size_t i = 0; i < data.test.size(); i += bs) {
    std::vector<Tensor> rows;
    for (std::size_t j = i; j < std::min(data.test.size(), i + bs); ++j)
      push_view(rows, data.patch_of(data.test[j], patch), identity, dummy);
    const NT out = net.predict(stack_batch(rows));
    for (int r = 0; r < out.dim(0); ++r) {
      if (task == "regression") {
        y_hat.push_back(out.at2(r, 0));
      } else {
        pred_class.push_back(argmax_row(out, r));
        std::vector<double> p(out.dim(1));
        for (int k = 0; k < out.dim(1); ++k) p[k] = out.at2(r, k);
        probs.push_back(p);
      }
    }
  }

  std::map<std::string, double> met;
  std::string report = "run " + id + "\nmodel " + model_run + "\ndata " + data_in.run_id +
                       "\nsplit test\nn " + std::to_string(data.test.size()) + "\n";
  char line[128];
  if (task == "regression") {
    double mse = 0.0;
    std::vector<std::vector<double>> table;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      const double y = data.test[i].cellularity;
      mse += (y_hat[i] - y) * (y_hat[i] - y);
      table.push_back({y_hat[i], y});
    }
    mse /= static_cast<double>(data.test.size());
    const IccResult icc_r = icc(table);
    met["mse"] = mse;
    met["icc"] = icc_r.icc;
    met["icc_lo"] = icc_r.lo;
    met["icc_hi"] = icc_r.hi;
    met["icc_degenerate"] = icc_r.degenerate ? 1.0 : 0.0;
    report += "icc_variant " + icc_r.variant + "\n";
  } else {
    std::vector<int> labels;
    for (const auto& r : data.test) labels.push_back(r.class_id);
    met["acc"] = accuracy(pred_class, labels);
    met["weighted_f1"] = weighted_f1(pred_class, labels);
    if (!probs.empty() && probs.front().size() == 2) {
      std::vector<double> scores;
      for (const auto& p : probs) scores.push_back(p[1]);
      try {
        const AucResult auc = auc_delong(scores, labels);
        met["auc"] = auc.auc;
        met["auc_lo"] = auc.lo;
        met["auc_hi"] = auc.hi;
      } catch (const NumericError& e) {
        std::fprintf(stderr, "eval: %s\n", e.what());
      }
    }
  }
  for (const auto& [k, v] : met) {
    std::snprintf(line, sizeof(line), "metric %s %.17g\n", k.c_str(), v);
    report += line;
  }
  write_file_atomic(store.path(id, ".report"), report);

  MetricsLog log = fresh_log(store, id);
  for (const auto& [k, v] : met) log.log(0, "test", k, v);

  RunManifest m;
  m.run_id = id;
  m.kind = "eval";
  m.seed = mman.seed;
  m.code_version = kCodeVersion;
  m.config = sub;
  m.inputs = inputs;
  m.output_hash = hex64(fnv1a64(report));
  m.metrics = met;
  store.save(m);
  return {id, false, probe.repaired, met};
}

void export_run_heatmap(const std::string& model_run, int pyramid, const std::string& out_base,
                        Store& store) {
  const RunManifest mman = store.load(model_run);
  if (mman.kind != "finetune" && mman.kind != "consist")
    throw ArgumentError("heatmap needs a finetune or consist run, got " + mman.kind);
  const std::string patch_key = mman.kind == "finetune" ? "finetune.patch" : "consist.patch";
  const int patch = std::stoi(mman.config.at(patch_key));
  const std::string task = mman.config.at("task");

  const SynthDataset data = load_data(store, find_input(mman, "data").run_id);
  if (pyramid < 0 || pyramid >= static_cast<int>(data.test_pyramids.size()))
    throw ArgumentError("pyramid index " + std::to_string(pyramid) + " outside 0.." +
                        std::to_string(data.test_pyramids.size() - 1));
  const Image& level0 = data.test_pyramids[static_cast<std::size_t>(pyramid)].pyr.levels[0];

  const Checkpoint ckpt = store.load_ckpt(mman);
  DownstreamNet net(downstream_config(ckpt));
  load_all(ckpt, net.params());

  // Non-overlapping tiles centered on a stride == patch grid.
  const AugPolicy identity{};
  Rng dummy(0);
  std::vector<PatchPred> preds;
  std::vector<std::pair<int, int>> centers;
  std::vector<Tensor> rows;
  auto flush = [&] {
    if (rows.empty()) return;
    const NT out = net.predict(stack_batch(rows));
    for (int r = 0; r < out.dim(0); ++r) {
      double prob;
      if (task == "regression")
        prob = out.at2(r, 0);
      else if (out.dim(1) == 2)
        prob = out.at2(r, 1);
      else
        prob = out.at2(r, argmax_row(out, r));
      preds.push_back({centers[static_cast<std::size_t>(r)].first,
                       centers[static_cast<std::size_t>(r)].second, prob});
    }
    rows.clear();
    centers.clear();
  };
  for (int cy = patch / 2; cy + patch / 2 <= level0.h; cy += patch)
    for (int cx = patch / 2; cx + patch / 2 <= level0.w; cx += patch) {
      push_view(rows, crop(level0, cy - patch / 2, cx - patch / 2, patch, patch), identity, dummy);
      centers.push_back({cx, cy});
      if (rows.size() == 64) flush();
    }
  flush();

  export_heatmap(build_heatmap(preds, patch, level0.w, level0.h), out_base);
}

std::vector<std::string> run_pipeline(const Config& c, const std::string& method, double alpha,
                                      Store& store) {
  const StageResult d = gen_data(c, store);
  const StageResult p = pretrain_stage(c, method, d.run_id, store);
  const StageResult f = finetune_stage(c, method, alpha, d.run_id, store);
  const StageResult k = consist_stage(c, f.run_id, store);
  const StageResult e = eval_stage(k.run_id, store);
  return {store.path(p.run_id, ".metrics"), store.path(f.run_id, ".metrics"),
          store.path(k.run_id, ".metrics"), store.path(e.run_id, ".metrics")};
}

// ---- matrix and ablations ----

MatrixSpec matrix_from_config(const Config& c) {
  MatrixSpec s;
  s.methods = c.get_list("matrix.methods");
  s.phases = c.get_list("matrix.phases");
  s.alphas = c.get_double_list("matrix.alphas");
  s.seeds.clear();
  for (const auto& item : c.get_list("matrix.seeds")) {
    try {
      s.seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("matrix.seeds: '" + item + "' is not an unsigned integer");
    }
  }
  return s;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string primary_metric(const Config& c) {
  return c.get("task") == "regression" ? "icc" : "acc";
}

}  // namespace

MatrixReport run_matrix(const MatrixSpec& spec, const Config& c, Store& store) {
  MatrixReport rep;
  if (spec.methods.empty() || spec.phases.empty() || spec.alphas.empty() || spec.seeds.empty())
    return rep;
  for (const auto& m : spec.methods) check_method(m);
  for (const auto& p : spec.phases)
    if (p != "ft" && p != "cr") throw ConfigError("unknown phase '" + p + "'");
  for (double a : spec.alphas) alpha_index(a);

  const StageResult d = gen_data(c, store);
  for (std::uint64_t seed : spec.seeds) {
    Config cs = c;
    cs.set_override("seed", std::to_string(seed));
    for (const auto& method : spec.methods) {
      for (double alpha : spec.alphas) {
        const StageResult ft = finetune_stage(cs, method, alpha, d.run_id, store);
        for (const auto& phase : spec.phases) {
          MatrixCell cell;
          cell.method = method;
          cell.phase = phase;
          cell.alpha = alpha;
          cell.seed = seed;
          if (phase == "ft") {
            const StageResult ev = eval_stage(ft.run_id, store);
            cell.run_id = ft.run_id;
            cell.cached = ft.cached && ev.cached;
            cell.metrics = ev.metrics;
          } else {
            const StageResult cr = consist_stage(cs, ft.run_id, store);
            const StageResult ev = eval_stage(cr.run_id, store);
            cell.run_id = cr.run_id;
            cell.cached = cr.cached && ev.cached;
            cell.metrics = ev.metrics;
          }
          rep.cells.push_back(cell);
        }
      }
    }
  }

  // Method x phase rows, alpha columns, seed-median of the primary metric.
  const std::string metric = primary_metric(c);
  std::ostringstream t;
  char buf[64];
  t << "method  phase";
  for (double a : spec.alphas) {
    std::snprintf(buf, sizeof(buf), "%9s", fmt_alpha(a).c_str());
    t << buf;
  }
  t << "   (" << metric << ", median over " << spec.seeds.size() << " seed"
    << (spec.seeds.size() == 1 ? "" : "s") << ")\n";
  for (const auto& method : spec.methods) {
    for (const auto& phase : spec.phases) {
      std::snprintf(buf, sizeof(buf), "%-7s %-5s", method.c_str(), phase.c_str());
      t << buf;
      for (double alpha : spec.alphas) {
        std::vector<double> vals;
        for (const auto& cell : rep.cells)
          if (cell.method == method && cell.phase == phase && cell.alpha == alpha &&
              cell.metrics.count(metric))
            vals.push_back(cell.metrics.at(metric));
        if (vals.empty())
          std::snprintf(buf, sizeof(buf), "%9s", "-");
        else
          std::snprintf(buf, sizeof(buf), "%9.3f", median(vals));
        t << buf;
      }
      t << "\n";
    }
  }
  rep.table = t.str();
  return rep;
}

AblationReport ablate(const std::string& axis, const Config& base, Store& store) {
  std::string key;
  if (axis == "mu")
    key = "consist.mu";
  else if (axis == "n_aug")
    key = "consist.n_aug";
  else
    throw ConfigError("unknown ablation axis '" + axis + "' (mu or n_aug)");

  // Ablations probe the consistency stage on the pretext-pretrained model
  // at the 10% label fraction.
  const double alpha = 0.10;
  const StageResult d = gen_data(base, store);
  const StageResult ft = finetune_stage(base, "rsp", alpha, d.run_id, store);

  AblationReport rep;
  rep.axis = axis;
  for (int v = 1; v <= 7; ++v) {
    Config cv = base;
    cv.set_override(key, std::to_string(v));
    const std::vector<std::string> delta = config_diff(cv, base);
    const bool clean = delta.empty() || (delta.size() == 1 && delta[0] == key);
    if (!clean)
      throw ConfigError("ablation config drifted beyond '" + key + "'");
    const StageResult cr = consist_stage(cv, ft.run_id, store);
    const StageResult ev = eval_stage(cr.run_id, store);
    rep.runs.push_back({v, cr.run_id, cr.cached && ev.cached, ev.metrics, delta});
  }

  const std::string metric = primary_metric(base);
  std::ostringstream t;
  char buf[64];
  t << (axis == "mu" ? "mu" : "n_aug") << "  " << metric << "\n";
  for (const auto& run : rep.runs) {
    const double val = run.metrics.count(metric) ? run.metrics.at(metric) : 0.0;
    std::snprintf(buf, sizeof(buf), "%-5d %8.3f\n", run.value, val);
    t << buf;
  }
  rep.table = t.str();
  return rep;
}

}  // namespace rsp
