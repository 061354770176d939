#include "rsp/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace rsp {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_i32(std::ostream& os, std::int32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::int32_t get_i32(std::istream& is) {
  std::int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw IntegrityError("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

std::string Checkpoint::arch_id() const {
  return enc_arch + "-w" + std::to_string(enc_width) + "-d" + std::to_string(enc_out);
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const ParamBlob& p : ckpt.params) {
    h = fnv1a64(p.name, h);
    const std::uint8_t t = p.trainable ? 1 : 0;
    h = fnv1a64(&t, 1, h);
    h = fnv1a64(p.shape.data(), p.shape.size() * sizeof(int), h);
    h = fnv1a64(p.values.data(), p.values.size() * sizeof(double), h);
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path);
  os.write(Checkpoint::kMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(ckpt.version));
  put_str(os, ckpt.kind);
  put_str(os, ckpt.enc_arch);
  put_i32(os, ckpt.enc_width);
  put_i32(os, ckpt.enc_out);
  put_i32(os, ckpt.feature_dim);
  put_i32(os, ckpt.head_classes);
  put_i32(os, ckpt.head_h1);
  put_i32(os, ckpt.head_h2);
  put_u32(os, ckpt.rsp_pathway ? 1 : 0);
  for (std::uint64_t s : ckpt.rng_state) put_u64(os, s);
  put_str(os, ckpt.manifest);
  put_u32(os, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const ParamBlob& p : ckpt.params) {
    put_str(os, p.name);
    put_u32(os, p.trainable ? 1 : 0);
    put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put_i32(os, d);
    put_u64(os, p.values.size());
    os.write(reinterpret_cast<const char*>(p.values.data()),
             static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  }
  put_u32(os, static_cast<std::uint32_t>(ckpt.stats.size()));
  for (const auto& [name, vals] : ckpt.stats) {
    put_str(os, name);
    put_u64(os, vals.size());
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  put_u64(os, checkpoint_hash(ckpt));
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
    throw IntegrityError("checkpoint: bad magic in " + path);
  Checkpoint ckpt;
  ckpt.version = static_cast<int>(get_u32(is));
  if (ckpt.version != 1)
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(ckpt.version));
  ckpt.kind = get_str(is);
  ckpt.enc_arch = get_str(is);
  ckpt.enc_width = get_i32(is);
  ckpt.enc_out = get_i32(is);
  ckpt.feature_dim = get_i32(is);
  ckpt.head_classes = get_i32(is);
  ckpt.head_h1 = get_i32(is);
  ckpt.head_h2 = get_i32(is);
  ckpt.rsp_pathway = get_u32(is) != 0;
  for (auto& s : ckpt.rng_state) s = get_u64(is);
  ckpt.manifest = get_str(is);
  const std::uint32_t np = get_u32(is);
  ckpt.params.resize(np);
  for (std::uint32_t i = 0; i < np; ++i) {
    ParamBlob& p = ckpt.params[i];
    p.name = get_str(is);
    p.trainable = get_u32(is) != 0;
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw IntegrityError("checkpoint: corrupt blob rank");
    p.shape.resize(rank);
    for (auto& d : p.shape) d = get_i32(is);
    const std::uint64_t count = get_u64(is);
    if (count > (1ull << 32)) throw IntegrityError("checkpoint: corrupt blob size");
    p.values.resize(count);
    is.read(reinterpret_cast<char*>(p.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
  const std::uint32_t ns = get_u32(is);
  for (std::uint32_t i = 0; i < ns; ++i) {
    std::string name = get_str(is);
    const std::uint64_t count = get_u64(is);
    if (count > (1ull << 32)) throw IntegrityError("checkpoint: corrupt stats size");
    std::vector<double> vals(count);
    is.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    ckpt.stats.emplace(std::move(name), std::move(vals));
  }
  const std::uint64_t stored = get_u64(is);
  if (!is) throw IntegrityError("checkpoint: truncated file " + path);
  if (stored != checkpoint_hash(ckpt))
    throw IntegrityError("checkpoint: hash mismatch in " + path);
  return ckpt;
}

void store_params(Checkpoint& ckpt, const std::vector<Param*>& ps) {
  ckpt.params.clear();
  ckpt.params.reserve(ps.size());
  for (const Param* p : ps) {
    ParamBlob b;
    b.name = p->name;
    b.trainable = p->trainable;
    b.shape = p->w.shape;
    b.values = p->w.v;
    ckpt.params.push_back(std::move(b));
  }
}

std::vector<std::string> load_matching(const Checkpoint& ckpt, const std::vector<Param*>& ps) {
  std::map<std::string, const ParamBlob*> index;
  for (const ParamBlob& b : ckpt.params) index[b.name] = &b;
  std::vector<std::string> missing;
  for (Param* p : ps) {
    auto it = index.find(p->name);
    if (it == index.end()) {
      missing.push_back(p->name);
      continue;
    }
    const ParamBlob& b = *it->second;
    if (b.shape != p->w.shape)
      throw ConfigError("checkpoint: shape mismatch for '" + p->name + "'");
    p->w.v = b.values;
  }
  return missing;
}

void load_all(const Checkpoint& ckpt, const std::vector<Param*>& ps) {
  const std::vector<std::string> missing = load_matching(ckpt, ps);
  if (!missing.empty())
    throw ConfigError("checkpoint: missing parameter '" + missing.front() + "'");
}

DownstreamConfig downstream_config(const Checkpoint& ckpt) {
  if (ckpt.head_classes < 0)
    throw ConfigError("checkpoint: no task head stored (kind " + ckpt.kind + ")");
  DownstreamConfig cfg;
  cfg.enc.arch = ckpt.enc_arch;
  cfg.enc.width = ckpt.enc_width;
  cfg.enc.out_dim = ckpt.enc_out;
  cfg.rsp_pathway = ckpt.rsp_pathway;
  cfg.head.in_dim = ckpt.feature_dim;
  cfg.head.classes = ckpt.head_classes;
  cfg.head.h1 = ckpt.head_h1;
  cfg.head.h2 = ckpt.head_h2;
  return cfg;
}

void describe_encoder(Checkpoint& ckpt, const EncoderConfig& enc) {
  ckpt.enc_arch = enc.arch;
  ckpt.enc_width = enc.width;
  ckpt.enc_out = enc.out_dim;
  ckpt.feature_dim = enc.out_dim;
}

void describe_downstream(Checkpoint& ckpt, const DownstreamConfig& cfg) {
  describe_encoder(ckpt, cfg.enc);
  ckpt.rsp_pathway = cfg.rsp_pathway;
  ckpt.feature_dim = cfg.head.in_dim;
  ckpt.head_classes = cfg.head.classes;
  ckpt.head_h1 = cfg.head.h1;
  ckpt.head_h2 = cfg.head.h2;
}

}  // namespace rsp
