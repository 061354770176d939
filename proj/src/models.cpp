#include "rsp/models.hpp"

#include <cmath>

namespace rsp {

namespace {

// Two 3x3 convs with identity (or 1x1 projected) shortcut.
class ResBlock : public Layer {
 public:
  ResBlock(std::string name, int in_ch, int out_ch, int stride)
      : c1_(name + ".c1", in_ch, out_ch, 3, stride, 1),
        c2_(name + ".c2", out_ch, out_ch, 3, 1, 1),
        has_proj_(stride != 1 || in_ch != out_ch),
        proj_(name + ".proj", in_ch, out_ch, 1, stride, 0) {}

  NT forward(const NT& x) override {
    a1_ = c1_.forward(x);
    NT a2;
    kern::relu_fwd(a1_, a2);
    NT a3 = c2_.forward(a2);
    NT s = has_proj_ ? proj_.forward(x) : x;
    if (!s.same_shape(a3)) throw IntegrityError("ResBlock: shortcut shape mismatch");
    pre_ = a3;
    for (std::size_t i = 0; i < pre_.v.size(); ++i) pre_.v[i] += s.v[i];
    NT y;
    kern::relu_fwd(pre_, y);
    return y;
  }

  NT backward(const NT& gy) override {
    NT dpre;
    kern::relu_bwd(pre_, gy, dpre);
    NT da2 = c2_.backward(dpre);
    NT da1;
    kern::relu_bwd(a1_, da2, da1);
    NT dx = c1_.backward(da1);
    if (has_proj_) {
      NT dxs = proj_.backward(dpre);
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxs.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dpre.v[i];
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    c1_.collect(out);
    c2_.collect(out);
    if (has_proj_) proj_.collect(out);
  }

  void init(Rng& rng) override {
    c1_.init(rng);
    c2_.init(rng);
    if (has_proj_) proj_.init(rng);
  }

 private:
  Conv2d c1_, c2_;
  bool has_proj_;
  Conv2d proj_;
  NT a1_, pre_;
};

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  const int w = cfg.width;
  if (cfg.arch == "small4") {
    net_.add<Conv2d>("enc.conv1", 3, w, 3, 2, 1);
    net_.add<ReLU>();
    net_.add<Conv2d>("enc.conv2", w, 2 * w, 3, 2, 1);
    net_.add<ReLU>();
    net_.add<Conv2d>("enc.conv3", 2 * w, 4 * w, 3, 2, 1);
    net_.add<ReLU>();
    net_.add<Conv2d>("enc.proj", 4 * w, cfg.out_dim, 1, 1, 0);
    net_.add<ReLU>();
    net_.add<GlobalAvgPool>();
  } else if (cfg.arch == "resnet18") {
    net_.add<Conv2d>("enc.stem", 3, w, 3, 1, 1);
    net_.add<ReLU>();
    net_.add<ResBlock>("enc.b1a", w, w, 1);
    net_.add<ResBlock>("enc.b1b", w, w, 1);
    net_.add<ResBlock>("enc.b2a", w, 2 * w, 2);
    net_.add<ResBlock>("enc.b2b", 2 * w, 2 * w, 1);
    net_.add<ResBlock>("enc.b3a", 2 * w, 4 * w, 2);
    net_.add<ResBlock>("enc.b3b", 4 * w, 4 * w, 1);
    net_.add<ResBlock>("enc.b4a", 4 * w, 8 * w, 2);
    net_.add<ResBlock>("enc.b4b", 8 * w, 8 * w, 1);
    if (8 * w != cfg.out_dim) {
      net_.add<Conv2d>("enc.proj", 8 * w, cfg.out_dim, 1, 1, 0);
      net_.add<ReLU>();
    }
    net_.add<GlobalAvgPool>();
  } else {
    throw ConfigError("Encoder: unknown architecture '" + cfg.arch + "'");
  }
}

NT Encoder::forward(const NT& x) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ArgumentError("Encoder: input must be [N,3,H,W]");
  NT h = net_.forward(x);
  if (h.rank() != 2 || h.dim(1) != cfg_.out_dim)
    throw IntegrityError("Encoder: output dimension is not " + std::to_string(cfg_.out_dim));
  if (!all_finite(h)) throw NumericError("Encoder: non-finite features");
  return h;
}

NT Encoder::backward(const NT& gh) { return net_.backward(gh); }

std::string Encoder::arch_id() const {
  return cfg_.arch + "-w" + std::to_string(cfg_.width) + "-d" + std::to_string(cfg_.out_dim);
}

// ---- RspHead ----

RspHead::RspHead() {
  pair_.add<Linear>("pair.fc1", kPair, 512);
  pair_.add<ReLU>();
  pair_.add<Linear>("pair.fc2", 512, kPairOut);
  seq_.add<Linear>("seq.fc1", kConcat, 256);
  seq_.add<ReLU>();
  seq_.add<Linear>("seq.fc2", 256, kClasses);
}

NT RspHead::forward(const NT& h3b) {
  if (h3b.rank() != 2 || h3b.dim(1) != kFeat || h3b.dim(0) % 3 != 0)
    throw ArgumentError("RspHead: input must be [3B,512]");
  batch_ = h3b.dim(0) / 3;
  const int B = batch_;
  NT P({3 * B, kPair});
  static const int pa[3] = {0, 0, 1}, pb[3] = {1, 2, 2};
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < 3; ++j) {
      const double* ha = h3b.data() + static_cast<std::size_t>(3 * i + pa[j]) * kFeat;
      const double* hb = h3b.data() + static_cast<std::size_t>(3 * i + pb[j]) * kFeat;
      double* row = P.v.data() + static_cast<std::size_t>(3 * i + j) * kPair;
      for (int d = 0; d < kFeat; ++d) row[d] = ha[d];
      for (int d = 0; d < kFeat; ++d) row[kFeat + d] = hb[d];
    }
  NT Z = pair_.forward(P);
  if (Z.dim(1) != kPairOut) throw IntegrityError("RspHead: pair output is not 256-d");
  NT F({B, kConcat});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < 3; ++j)
      for (int d = 0; d < kPairOut; ++d)
        F.at2(i, j * kPairOut + d) = Z.at2(3 * i + j, d);
  NT logits = seq_.forward(F);
  if (logits.dim(1) != kClasses) throw IntegrityError("RspHead: logits are not 6-d");
  return logits;
}

NT RspHead::backward(const NT& dlogits) {
  const int B = batch_;
  if (dlogits.rank() != 2 || dlogits.dim(0) != B || dlogits.dim(1) != kClasses)
    throw ArgumentError("RspHead: gradient must be [B,6]");
  NT dF = seq_.backward(dlogits);
  NT dZ({3 * B, kPairOut});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < 3; ++j)
      for (int d = 0; d < kPairOut; ++d)
        dZ.at2(3 * i + j, d) = dF.at2(i, j * kPairOut + d);
  NT dP = pair_.backward(dZ);
  NT dH({3 * B, kFeat});
  static const int pa[3] = {0, 0, 1}, pb[3] = {1, 2, 2};
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < 3; ++j) {
      const double* row = dP.v.data() + static_cast<std::size_t>(3 * i + j) * kPair;
      double* da = dH.v.data() + static_cast<std::size_t>(3 * i + pa[j]) * kFeat;
      double* db = dH.v.data() + static_cast<std::size_t>(3 * i + pb[j]) * kFeat;
      for (int d = 0; d < kFeat; ++d) da[d] += row[d];
      for (int d = 0; d < kFeat; ++d) db[d] += row[kFeat + d];
    }
  return dH;
}

std::vector<Param*> RspHead::params() {
  std::vector<Param*> out = pair_.params();
  for (Param* p : seq_.params()) out.push_back(p);
  return out;
}

void RspHead::init(Rng& rng) {
  pair_.init(rng);
  seq_.init(rng);
}

void RspHead::zero_grad() {
  pair_.zero_grad();
  seq_.zero_grad();
}

// ---- RspNet ----

RspNet::RspNet(const EncoderConfig& enc) : enc_(enc) {
  if (enc_.out_dim() != RspHead::kFeat)
    throw ConfigError("RspNet: encoder output dimension must be 512");
}

NT RspNet::forward(const NT& x) {
  if (x.dim(0) % 3 != 0) throw ArgumentError("RspNet: batch must stack 3 patches per tuple");
  return head_.forward(enc_.forward(x));
}

NT RspNet::backward(const NT& dlogits) { return enc_.backward(head_.backward(dlogits)); }

std::vector<Param*> RspNet::params() {
  std::vector<Param*> out = enc_.params();
  for (Param* p : head_.params()) out.push_back(p);
  return out;
}

void RspNet::init(Rng& rng) {
  enc_.init(rng);
  head_.init(rng);
}

void RspNet::zero_grad() {
  enc_.zero_grad();
  head_.zero_grad();
}

// ---- TaskHead ----

TaskHead::TaskHead(const TaskHeadConfig& cfg) : cfg_(cfg) {
  const int out = cfg.classes > 0 ? cfg.classes : 1;
  net_.add<Linear>("head.fc1", cfg.in_dim, cfg.h1);
  net_.add<ReLU>();
  net_.add<Linear>("head.fc2", cfg.h1, cfg.h2);
  net_.add<Linear>("head.final", cfg.h2, out);
}

NT TaskHead::forward(const NT& feat) {
  if (feat.rank() != 2 || feat.dim(1) != cfg_.in_dim)
    throw ConfigError("TaskHead: feature dim mismatch, want " + std::to_string(cfg_.in_dim) +
                      " got " + std::to_string(feat.rank() == 2 ? feat.dim(1) : -1));
  return net_.forward(feat);
}

NT TaskHead::backward(const NT& dlogits) { return net_.backward(dlogits); }

// ---- DownstreamNet ----

DownstreamNet::DownstreamNet(const DownstreamConfig& cfg)
    : cfg_(cfg), enc_(cfg.enc), head_(cfg.head) {
  if (cfg.rsp_pathway) {
    if (cfg.head.in_dim != RspHead::kConcat)
      throw ConfigError("DownstreamNet: the pairwise pathway produces 768-d features");
    pair_.add<Linear>("pair.fc1", RspHead::kPair, 512);
    pair_.add<ReLU>();
    pair_.add<Linear>("pair.fc2", 512, RspHead::kPairOut);
  } else if (cfg.head.in_dim != cfg.enc.out_dim) {
    throw ConfigError("DownstreamNet: head input dim must equal encoder output dim");
  }
}

NT DownstreamNet::features(const NT& x) {
  NT h = enc_.forward(x);
  last_n_ = h.dim(0);
  if (!cfg_.rsp_pathway) return h;
  const int N = h.dim(0), F = RspHead::kFeat;
  NT P({N, 2 * F});
  for (int i = 0; i < N; ++i)
    for (int d = 0; d < F; ++d) {
      P.at2(i, d) = h.at2(i, d);
      P.at2(i, F + d) = h.at2(i, d);
    }
  NT z = pair_.forward(P);
  NT out({N, 3 * RspHead::kPairOut});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < 3; ++j)
      for (int d = 0; d < RspHead::kPairOut; ++d)
        out.at2(i, j * RspHead::kPairOut + d) = z.at2(i, d);
  return out;
}

NT DownstreamNet::forward(const NT& x) {
  NT out = head_.forward(features(x));
  if (cfg_.head.classes == 0) out = squash_.forward(out);
  return out;
}

NT DownstreamNet::backward(const NT& dout) {
  const NT dlogits = cfg_.head.classes == 0 ? squash_.backward(dout) : dout;
  NT dF = head_.backward(dlogits);
  if (!cfg_.rsp_pathway) return enc_.backward(dF);
  const int N = last_n_, K = RspHead::kPairOut, F = RspHead::kFeat;
  NT dz({N, K});
  for (int i = 0; i < N; ++i)
    for (int d = 0; d < K; ++d)
      dz.at2(i, d) = dF.at2(i, d) + dF.at2(i, K + d) + dF.at2(i, 2 * K + d);
  NT dP = pair_.backward(dz);
  NT dh({N, F});
  for (int i = 0; i < N; ++i)
    for (int d = 0; d < F; ++d) dh.at2(i, d) = dP.at2(i, d) + dP.at2(i, F + d);
  return enc_.backward(dh);
}

NT DownstreamNet::predict(const NT& x) {
  NT out = forward(x);
  if (cfg_.head.classes == 0) return out;  // already squashed to (0,1)
  const int N = out.dim(0), C = out.dim(1);
  NT probs({N, C});
  for (int i = 0; i < N; ++i) {
    double mx = out.at2(i, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, out.at2(i, c));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(out.at2(i, c) - mx);
    for (int c = 0; c < C; ++c) probs.at2(i, c) = std::exp(out.at2(i, c) - mx) / sum;
  }
  return probs;
}

std::vector<Param*> DownstreamNet::params() {
  std::vector<Param*> out = enc_.params();
  if (cfg_.rsp_pathway)
    for (Param* p : pair_.params()) out.push_back(p);
  for (Param* p : head_.params()) out.push_back(p);
  return out;
}

void DownstreamNet::init(Rng& rng) {
  enc_.init(rng);
  if (cfg_.rsp_pathway) pair_.init(rng);
  head_.init(rng);
}

void DownstreamNet::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

DownstreamNet DownstreamNet::clone() const {
  DownstreamNet out(cfg_);
  auto* self = const_cast<DownstreamNet*>(this);
  const std::vector<Param*> src = self->params();
  const std::vector<Param*> dst = out.params();
  copy_params(src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->trainable = src[i]->trainable;
  return out;
}

// ---- FreezeSpec ----

FreezeSpec FreezeSpec::uniform(const std::vector<Param*>& ps, bool trainable_flag) {
  FreezeSpec s;
  for (const Param* p : ps) s.trainable[p->name] = trainable_flag;
  return s;
}

FreezeSpec FreezeSpec::head_only(const std::vector<Param*>& ps) {
  FreezeSpec s;
  for (const Param* p : ps) s.trainable[p->name] = p->name.rfind("head.", 0) == 0;
  return s;
}

FreezeSpec FreezeSpec::mlp_and_head(const std::vector<Param*>& ps) {
  FreezeSpec s;
  for (const Param* p : ps)
    s.trainable[p->name] =
        p->name.rfind("head.", 0) == 0 || p->name.rfind("pair.", 0) == 0;
  return s;
}

void FreezeSpec::apply(const std::vector<Param*>& ps) const {
  for (Param* p : ps) {
    auto it = trainable.find(p->name);
    if (it == trainable.end())
      throw ConfigError("FreezeSpec: parameter '" + p->name + "' is not covered");
    p->trainable = it->second;
  }
}

DownstreamNet clone_and_freeze(const DownstreamNet& model, const FreezeSpec& spec) {
  DownstreamNet out = model.clone();
  spec.apply(out.params());
  return out;
}

// ---- VaeNet ----

VaeNet::VaeNet(const VaeConfig& cfg)
    : cfg_(cfg),
      enc_(cfg.enc),
      mu_("vae.mu", cfg.enc.out_dim, cfg.latent),
      logvar_("vae.logvar", cfg.enc.out_dim, cfg.latent) {
  int side = 4, ch = 64;
  if (cfg.patch < 8 || (cfg.patch & (cfg.patch - 1)) != 0)
    throw ConfigError("VaeNet: patch side must be a power of two >= 8");
  dec_.add<Linear>("dec.fc", cfg.latent, ch * side * side);
  dec_.add<Reshape4>(ch, side, side);
  dec_.add<ReLU>();
  int idx = 1;
  while (side < cfg.patch) {
    const int next = std::max(ch / 2, 8);
    dec_.add<Upsample2>();
    dec_.add<Conv2d>("dec.conv" + std::to_string(idx++), ch, next, 3, 1, 1);
    dec_.add<ReLU>();
    ch = next;
    side *= 2;
  }
  dec_.add<Conv2d>("dec.out", ch, 3, 3, 1, 1);
  dec_.add<Sigmoid>();
}

VaeNet::Forward VaeNet::forward(const NT& x, Rng& rng) {
  Forward f;
  h_ = enc_.forward(x);
  f.mu = mu_.forward(h_);
  f.logvar = logvar_.forward(h_);
  eps_ = NT(f.mu.shape);
  for (auto& v : eps_.v) v = rng.normal();
  f.z = f.mu;
  for (std::size_t i = 0; i < f.z.v.size(); ++i)
    f.z.v[i] += std::exp(0.5 * f.logvar.v[i]) * eps_.v[i];
  f.recon = dec_.forward(f.z);
  return f;
}

void VaeNet::backward(const Forward& f, const NT& dmu, const NT& dlogvar, const NT& drecon) {
  NT dz = dec_.backward(drecon);
  NT dmu_t = dmu;
  NT dlv_t = dlogvar;
  for (std::size_t i = 0; i < dz.v.size(); ++i) {
    dmu_t.v[i] += dz.v[i];
    dlv_t.v[i] += dz.v[i] * 0.5 * std::exp(0.5 * f.logvar.v[i]) * eps_.v[i];
  }
  NT dh = mu_.backward(dmu_t);
  NT dh2 = logvar_.backward(dlv_t);
  for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += dh2.v[i];
  enc_.backward(dh);
}

std::vector<Param*> VaeNet::params() {
  std::vector<Param*> out = enc_.params();
  mu_.collect(out);
  logvar_.collect(out);
  for (Param* p : dec_.params()) out.push_back(p);
  return out;
}

void VaeNet::init(Rng& rng) {
  enc_.init(rng);
  mu_.init(rng);
  logvar_.init(rng);
  dec_.init(rng);
}

void VaeNet::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

// ---- MocoNet ----

MocoNet::MocoNet(const EncoderConfig& enc_cfg) : enc(enc_cfg), proj("moco.proj", 512, 128) {}

NT MocoNet::forward(const NT& x) {
  h_ = enc.forward(x);
  p_ = proj.forward(h_);
  q_ = p_;
  const int N = p_.dim(0), D = p_.dim(1);
  for (int i = 0; i < N; ++i) {
    double n2 = 0.0;
    for (int d = 0; d < D; ++d) n2 += p_.at2(i, d) * p_.at2(i, d);
    const double n = std::sqrt(std::max(n2, 1e-12));
    for (int d = 0; d < D; ++d) q_.at2(i, d) = p_.at2(i, d) / n;
  }
  return q_;
}

NT MocoNet::backward(const NT& dq) {
  const int N = p_.dim(0), D = p_.dim(1);
  NT dp({N, D});
  for (int i = 0; i < N; ++i) {
    double n2 = 0.0, dot = 0.0;
    for (int d = 0; d < D; ++d) n2 += p_.at2(i, d) * p_.at2(i, d);
    const double n = std::sqrt(std::max(n2, 1e-12));
    for (int d = 0; d < D; ++d) dot += dq.at2(i, d) * q_.at2(i, d);
    for (int d = 0; d < D; ++d) dp.at2(i, d) = (dq.at2(i, d) - q_.at2(i, d) * dot) / n;
  }
  NT dh = proj.backward(dp);
  return enc.backward(dh);
}

std::vector<Param*> MocoNet::params() {
  std::vector<Param*> out = enc.params();
  proj.collect(out);
  return out;
}

void MocoNet::init(Rng& rng) {
  enc.init(rng);
  proj.init(rng);
}

void MocoNet::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

}  // namespace rsp
