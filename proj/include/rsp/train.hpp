#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsp/augment.hpp"
#include "rsp/checkpoint.hpp"
#include "rsp/dataset.hpp"

namespace rsp {

// Append-only line-delimited metrics writer. One record per line:
//   <run_id> <epoch> <split> <metric> <value>
// with the value printed at full round-trip precision so identical runs
// produce byte-identical logs.
class MetricsLog {
 public:
  MetricsLog() = default;  // disabled sink
  MetricsLog(const std::string& path, std::string run_id);
  void log(int epoch, const std::string& split, const std::string& metric, double value);
  bool enabled() const { return os_ != nullptr; }
  const std::string& run_id() const { return run_id_; }

 private:
  std::shared_ptr<std::ofstream> os_;
  std::string run_id_;
};

// One metrics-log line parsed back.
struct MetricRecord {
  std::string run_id;
  int epoch = 0;
  std::string split, metric;
  double value = 0.0;
};
std::vector<MetricRecord> read_metrics(const std::string& path);

// Stack float [C,H,W] tensors into a double network batch [N,C,H,W].
NT stack_batch(const std::vector<Tensor>& xs);

// Image -> augmented training row helper; policy applied in float, result
// appended to `rows`.
void push_view(std::vector<Tensor>& rows, const Image& img, const AugPolicy& policy, Rng& rng);

// First index of the extreme value (ties -> lowest index).
int select_min(const std::vector<double>& vals);
int select_max(const std::vector<double>& vals);

int argmax_row(const NT& m, int row);

// Labeled-example evaluation shared by the fine-tune and consistency loops:
// regression scores MSE of the squashed scalar prediction against
// cellularity, classification scores CE + accuracy against class ids.
struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;  // classification only
};
EvalResult eval_downstream(DownstreamNet& net, const SynthDataset& data,
                           const std::vector<ExampleRec>& recs, int patch, int batch);

// Pool of single-magnification patches for the contrastive / generative
// baselines, sampled round-robin over pyramids with tissue rejection.
struct PatchPool {
  std::vector<Image> patches;
};
PatchPool sample_patch_pool(const std::vector<SynthPyramid>& pyrs, int n, int patch,
                            int level, Rng& rng);

// Pool of concentric tuples for pretext training.
struct TuplePool {
  std::vector<PatchTuple> tuples;
};
TuplePool sample_tuple_pool(const std::vector<SynthPyramid>& pyrs, int n, int patch,
                            std::array<int, 3> level_triple, Rng& rng);

// Encoder-only checkpoint with freshly initialized weights: the same
// fine-tune code path then realizes the train-from-scratch baseline.
Checkpoint random_init_checkpoint(const EncoderConfig& enc, std::uint64_t seed);

}  // namespace rsp
