#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsp/layers.hpp"

namespace rsp {

// ---- encoder ----

struct EncoderConfig {
  std::string arch = "small4";  // small4 | resnet18
  int width = 16;               // first-stage channel count
  int out_dim = 512;
};

class Encoder {
 public:
  explicit Encoder(const EncoderConfig& cfg);
  NT forward(const NT& x);  // [N,3,H,W] -> [N,out_dim]
  NT backward(const NT& gh);
  std::vector<Param*> params() { return net_.params(); }
  void init(Rng& rng) { net_.init(rng); }
  void zero_grad() { net_.zero_grad(); }
  int out_dim() const { return cfg_.out_dim; }
  std::string arch_id() const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Net net_;
};

// ---- sequence-prediction head ----
// Shared pairwise MLP 1024 -> 512 -> 256 over the pairs (h1,h2), (h1,h3),
// (h2,h3); concatenation to 768; sequence MLP 768 -> 256 -> 6.
class RspHead {
 public:
  RspHead();
  // h3b: [3B, 512], tuple-major (row 3i+s = slot s of tuple i).
  NT forward(const NT& h3b);
  NT backward(const NT& dlogits);  // [B,6] -> [3B,512]
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();
  Net& pair_mlp() { return pair_; }

  // Dimensions checked on every forward pass.
  static constexpr int kFeat = 512, kPair = 1024, kPairOut = 256, kConcat = 768, kClasses = 6;

 private:
  Net pair_, seq_;
  int batch_ = 0;
};

// Full pretext network: shared encoder + head.
class RspNet {
 public:
  explicit RspNet(const EncoderConfig& enc);
  // x: [3B,3,P,P] tuple-major stack of sequence patches.
  NT forward(const NT& x);
  NT backward(const NT& dlogits);
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();
  Encoder& encoder() { return enc_; }
  RspHead& head() { return head_; }

 private:
  Encoder enc_;
  RspHead head_;
};

// ---- downstream task head ----

struct TaskHeadConfig {
  int in_dim = 512;
  int classes = 0;  // 0 = regressor (scalar squashed to [0,1])
  int h1 = 256, h2 = 128;
};

// Fc1 -> ReLU -> Fc2 -> final linear. Parameter names are prefixed "head.".
class TaskHead {
 public:
  explicit TaskHead(const TaskHeadConfig& cfg);
  NT forward(const NT& feat);       // logits [N,C] or raw scalar [N,1]
  NT backward(const NT& dlogits);
  std::vector<Param*> params() { return net_.params(); }
  void init(Rng& rng) { net_.init(rng); }
  const TaskHeadConfig& config() const { return cfg_; }

 private:
  TaskHeadConfig cfg_;
  Net net_;
};

// ---- downstream network ----

struct DownstreamConfig {
  EncoderConfig enc;
  bool rsp_pathway = false;  // route features through the pairwise MLP to 768
  TaskHeadConfig head;
};

// Encoder (+ optional pairwise pathway replicating the pretext feature
// construction on a single patch: h -> [h,h] -> pairwise MLP -> z -> [z,z,z])
// + task head.
class DownstreamNet {
 public:
  explicit DownstreamNet(const DownstreamConfig& cfg);
  // [N,3,P,P] -> logits [N,C] (classifier) or predictions [N,1] in (0,1)
  // (regressor: final linear output squashed by a logistic).
  NT forward(const NT& x);
  NT backward(const NT& dlogits);
  NT features(const NT& x);  // the head's input features
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();
  DownstreamNet clone() const;

  // Classifier: softmax rows. Regressor: same as forward.
  NT predict(const NT& x);

  const DownstreamConfig& config() const { return cfg_; }
  Encoder& encoder() { return enc_; }
  Net& pair_mlp() { return pair_; }
  TaskHead& head() { return head_; }

 private:
  DownstreamConfig cfg_;
  Encoder enc_;
  Net pair_;  // used when cfg_.rsp_pathway
  TaskHead head_;
  Sigmoid squash_;  // regression output activation
  int last_n_ = 0;
};

// ---- freezing ----

struct FreezeSpec {
  std::map<std::string, bool> trainable;

  static FreezeSpec uniform(const std::vector<Param*>& ps, bool trainable_flag);
  // Only parameters named "head.*" train (Fc1, Fc2, final linear).
  static FreezeSpec head_only(const std::vector<Param*>& ps);
  // Pairwise MLP + task head train; the backbone stays frozen.
  static FreezeSpec mlp_and_head(const std::vector<Param*>& ps);
  // ConfigError when a model parameter is missing from the spec.
  void apply(const std::vector<Param*>& ps) const;
};

DownstreamNet clone_and_freeze(const DownstreamNet& model, const FreezeSpec& spec);

// ---- generative baseline ----

struct VaeConfig {
  EncoderConfig enc;
  int latent = 512;
  int patch = 32;  // decoder output side, power of two >= 8
};

class VaeNet {
 public:
  explicit VaeNet(const VaeConfig& cfg);
  struct Forward {
    NT mu, logvar, z, recon;
  };
  Forward forward(const NT& x, Rng& rng);
  // dmu/dlogvar/drecon are gradients of the loss w.r.t. those outputs;
  // eps is recovered from the cached draw.
  void backward(const Forward& f, const NT& dmu, const NT& dlogvar, const NT& drecon);
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();
  Encoder& encoder() { return enc_; }
  const VaeConfig& config() const { return cfg_; }

 private:
  VaeConfig cfg_;
  Encoder enc_;
  Linear mu_, logvar_;
  Net dec_;
  NT h_, eps_;
};

// ---- contrastive baseline ----

struct MocoNet {
  explicit MocoNet(const EncoderConfig& enc_cfg);
  Encoder enc;
  Linear proj;  // 512 -> 128 projection used only by the contrastive loss
  NT forward(const NT& x);            // normalized projections [N,128]
  NT backward(const NT& dq);
  std::vector<Param*> params();
  void init(Rng& rng);
  void zero_grad();

 private:
  NT h_, p_, q_;
};

}  // namespace rsp
