#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsp/baselines.hpp"
#include "rsp/config.hpp"
#include "rsp/consistency.hpp"
#include "rsp/finetune.hpp"
#include "rsp/pretrain.hpp"

namespace rsp {

inline constexpr const char* kCodeVersion = "0.1.0";
// Environment variable naming the artifact root used when --store is absent.
inline constexpr const char* kStoreEnvVar = "RSP_STORE";

// One input artifact of a run: which role it plays, the run that produced
// it, and the hash recorded for integrity checks.
struct ManifestInput {
  std::string role;    // data | init | finetune | model
  std::string run_id;
  std::string hash;
};

// Provenance record of one run. The run id is a digest of the run kind, the
// seed, the relevant config subset and the input hashes, so identical work
// always lands on the same id (that is what makes caching sound).
struct RunManifest {
  std::string run_id;
  std::string kind;  // gen-data | pretrain | finetune | consist | eval
  std::uint64_t seed = 0;
  std::string code_version;
  std::map<std::string, std::string> config;  // the run-relevant snapshot
  std::vector<ManifestInput> inputs;
  std::string output_hash;  // checkpoint hash / dataset digest / report digest
  std::map<std::string, double> metrics;
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);

// Directory of run artifacts: <id>.manifest, <id>.ckpt, <id>.metrics,
// <id>.report. Manifest writes go through an advisory file lock so
// concurrent writers (independent matrix cells) do not interleave.
class Store {
 public:
  explicit Store(std::string dir);  // creates the directory if needed
  const std::string& dir() const { return dir_; }
  std::string path(const std::string& run_id, const std::string& ext) const;

  bool has(const std::string& run_id) const;
  RunManifest load(const std::string& run_id) const;  // IoError if absent
  void save(const RunManifest& m) const;
  std::vector<RunManifest> all() const;

  void save_ckpt(const std::string& run_id, const Checkpoint& ckpt) const;
  // Loads, re-hashes, and compares against the manifest -> IntegrityError.
  Checkpoint load_ckpt(const RunManifest& m) const;

 private:
  std::string dir_;
};

// Independent named rng streams derived from one master seed; the stream
// names are recorded in every manifest that draws from them.
struct SeedStreams {
  Rng sampling, aug_weak, aug_strong, init, shuffle;
};
extern const std::vector<std::string> kSeedStreamNames;
SeedStreams seed_all(std::uint64_t seed);

// ---- config -> module-config mapping ----
SynthDataConfig data_config(const Config& c);
EncoderConfig encoder_config(const Config& c);
PretrainConfig pretrain_config(const Config& c);
MocoConfig moco_config(const Config& c);
VaeTrainConfig vae_config(const Config& c);
FinetuneConfig finetune_config(const Config& c);
ConsistencyConfig consistency_config(const Config& c);

// Content digest of a generated dataset (pyramid rasters + example records).
std::string dataset_digest(const SynthDataset& data);

// ---- pipeline stages ----
// Every stage is idempotent: if the store already holds a manifest for the
// derived run id and its artifact verifies, the stage returns it as a cache
// hit; a corrupted artifact is reported and the cell re-runs.
struct StageResult {
  std::string run_id;
  bool cached = false;
  bool repaired = false;  // cache existed but failed verification; re-ran
  std::map<std::string, double> metrics;
};

// Records the generation recipe + content digest; the dataset itself is
// rebuilt from the recipe on load and verified against the digest.
StageResult gen_data(const Config& c, Store& store);
SynthDataset load_data(const Store& store, const std::string& data_run);

// method: rsp | moco | vae | random.
StageResult pretrain_stage(const Config& c, const std::string& method,
                           const std::string& data_run, Store& store);
StageResult finetune_stage(const Config& c, const std::string& method, double alpha,
                           const std::string& data_run, Store& store);
StageResult consist_stage(const Config& c, const std::string& ft_run, Store& store);
// Test-split metrics of a finetune or consist run; writes a metrics log and
// a structured text report. Everything needed comes from the model run's
// manifest, so no config is taken.
StageResult eval_stage(const std::string& model_run, Store& store);

// Tile one held-out pyramid on the model's patch grid and export the
// resulting probability map as image files plus a geometry sidecar
// (<out_base>.pgm / .mask.pgm / .json). Regression models map their
// predicted fraction onto the grid; binary classifiers the positive-class
// probability; larger heads the top-class confidence.
void export_run_heatmap(const std::string& model_run, int pyramid, const std::string& out_base,
                        Store& store);

// gen-data -> pretrain(method) -> finetune(alpha) -> consist -> eval.
// Returns the metrics-log paths of the four logging stages in order.
std::vector<std::string> run_pipeline(const Config& c, const std::string& method,
                                      double alpha, Store& store);

// ---- experiment matrix ----
struct MatrixSpec {
  std::vector<std::string> methods{"random", "vae", "moco", "rsp"};
  std::vector<std::string> phases{"ft", "cr"};
  std::vector<double> alphas{0.10, 0.25, 0.50, 1.00};
  std::vector<std::uint64_t> seeds{1};
};
MatrixSpec matrix_from_config(const Config& c);

struct MatrixCell {
  std::string method, phase;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string run_id;  // the evaluated model run
  bool cached = false;
  std::map<std::string, double> metrics;
};

struct MatrixReport {
  std::vector<MatrixCell> cells;
  std::string table;  // method x phase rows, alpha columns, seed-median values
};
MatrixReport run_matrix(const MatrixSpec& spec, const Config& c, Store& store);

// ---- ablations ----
struct AblationRun {
  int value = 0;
  std::string run_id;
  bool cached = false;
  std::map<std::string, double> metrics;
  std::vector<std::string> config_delta;  // resolved diff vs. the base config
};

struct AblationReport {
  std::string axis;  // mu | n_aug
  std::vector<AblationRun> runs;
  std::string table;
};
// Sweeps consist.mu or consist.n_aug over 1..7 at the 10% label fraction,
// re-running only the consistency stage on a shared fine-tuned model.
AblationReport ablate(const std::string& axis, const Config& base, Store& store);

}  // namespace rsp
