#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "rsp/models.hpp"

namespace rsp {

struct ParamBlob {
  std::string name;
  bool trainable = true;
  std::vector<int> shape;
  std::vector<double> values;
};

// Versioned parameter container shared by every training stage. The stats
// section is reserved for running statistics; current encoders have none, so
// it round-trips empty.
struct Checkpoint {
  static constexpr const char* kMagic = "RSPCKPT1";
  int version = 1;
  std::string kind;       // rsp | moco | vae | random | finetune | consist
  std::string enc_arch;   // encoder architecture name
  int enc_width = 0;
  int enc_out = 0;
  int feature_dim = 0;    // head input dim: 768 via the pairwise pathway, else enc_out
  int head_classes = -1;  // -1 none, 0 regressor, >0 classifier
  int head_h1 = 0, head_h2 = 0;
  bool rsp_pathway = false;
  std::array<std::uint64_t, 4> rng_state{};
  std::string manifest;  // id of the producing run
  std::vector<ParamBlob> params;
  std::map<std::string, std::vector<double>> stats;

  std::string arch_id() const;
};

// Hash over the parameter section (names, flags, shapes, raw values).
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Verifies magic, version and parameter hash; corruption -> IntegrityError.
Checkpoint load_checkpoint(const std::string& path);

// Snapshot model parameters into the blob list (replaces existing blobs).
void store_params(Checkpoint& ckpt, const std::vector<Param*>& ps);

// Copy blobs into matching model parameters (by name, shapes must agree);
// returns the names of model parameters the checkpoint did not provide.
std::vector<std::string> load_matching(const Checkpoint& ckpt, const std::vector<Param*>& ps);

// Like load_matching but every model parameter must be provided.
void load_all(const Checkpoint& ckpt, const std::vector<Param*>& ps);

// Rebuild the downstream model description stored in a fine-tuned checkpoint.
DownstreamConfig downstream_config(const Checkpoint& ckpt);

// Describe a model in checkpoint metadata fields.
void describe_encoder(Checkpoint& ckpt, const EncoderConfig& enc);
void describe_downstream(Checkpoint& ckpt, const DownstreamConfig& cfg);

}  // namespace rsp
