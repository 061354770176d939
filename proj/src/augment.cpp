#include "rsp/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_rgb(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) <= 0 || img.dim(2) <= 0)
    throw ArgumentError("augment: expected a non-empty [3,H,W] image tensor");
}

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Reflect indexing without edge repetition (…2 1 0 1 2… at the border).
inline int refl(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

inline float sample_bilinear(const Tensor& img, int ch, double sy, double sx) {
  const int H = img.dim(1), W = img.dim(2);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const double fy = sy - y0, fx = sx - x0;
  const int ya = refl(y0, H), yb = refl(y0 + 1, H);
  const int xa = refl(x0, W), xb = refl(x0 + 1, W);
  const float v00 = img.v[(static_cast<std::size_t>(ch) * H + ya) * W + xa];
  const float v01 = img.v[(static_cast<std::size_t>(ch) * H + ya) * W + xb];
  const float v10 = img.v[(static_cast<std::size_t>(ch) * H + yb) * W + xa];
  const float v11 = img.v[(static_cast<std::size_t>(ch) * H + yb) * W + xb];
  return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                            fy * ((1 - fx) * v10 + fx * v11));
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int i = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Stain vectors (rows): hematoxylin, eosin, DAB in optical-density space.
const double kStain[3][3] = {{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}};

struct StainMatrices {
  double fwd[3][3];  // normalized stain rows
  double inv[3][3];
};

StainMatrices make_stain_matrices() {
  StainMatrices m{};
  for (int i = 0; i < 3; ++i) {
    double n = 0.0;
    for (int j = 0; j < 3; ++j) n += kStain[i][j] * kStain[i][j];
    n = std::sqrt(n);
    for (int j = 0; j < 3; ++j) m.fwd[i][j] = kStain[i][j] / n;
  }
  const auto& a = m.fwd;
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                     a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  if (std::abs(det) < 1e-9) throw ConfigError("hed_perturb: stain matrix is singular");
  const double id = 1.0 / det;
  m.inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * id;
  m.inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * id;
  m.inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * id;
  m.inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * id;
  m.inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * id;
  m.inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * id;
  m.inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * id;
  m.inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * id;
  m.inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * id;
  return m;
}

}  // namespace

const char* tf_name(Tf t) {
  switch (t) {
    case Tf::hflip: return "hflip";
    case Tf::crop_resize: return "crop_resize";
    case Tf::rotate: return "rotate";
    case Tf::scale: return "scale";
    case Tf::noise: return "noise";
    case Tf::affine: return "affine";
    case Tf::hue: return "hue";
    case Tf::saturation: return "saturation";
    case Tf::brightness: return "brightness";
    case Tf::contrast: return "contrast";
    case Tf::blur: return "blur";
    case Tf::hed: return "hed";
    case Tf::hsv: return "hsv";
  }
  return "?";
}

Tensor warp_affine(const Tensor& img, double a, double b, double c, double d, double tx,
                   double ty) {
  check_rgb(img);
  const int H = img.dim(1), W = img.dim(2);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  Tensor out({3, H, W});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double sx = a * (x - cx) + b * (y - cy) + cx + tx;
        const double sy = c * (x - cx) + d * (y - cy) + cy + ty;
        out.v[(static_cast<std::size_t>(ch) * H + y) * W + x] =
            clamp01(sample_bilinear(img, ch, sy, sx));
      }
  return out;
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
  check_rgb(img);
  const int H = img.dim(1), W = img.dim(2);
  Tensor out({3, oh, ow});
  const double ry = oh > 1 ? static_cast<double>(H - 1) / (oh - 1) : 0.0;
  const double rx = ow > 1 ? static_cast<double>(W - 1) / (ow - 1) : 0.0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        out.v[(static_cast<std::size_t>(ch) * oh + y) * ow + x] =
            clamp01(sample_bilinear(img, ch, y * ry, x * rx));
  return out;
}

Tensor gaussian_blur(const Tensor& img, int ksize) {
  check_rgb(img);
  if (ksize < 1 || ksize % 2 == 0) throw ArgumentError("gaussian_blur: kernel must be odd");
  const int H = img.dim(1), W = img.dim(2), r = ksize / 2;
  const double sigma = 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> k(ksize);
  double sum = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - r;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  Tensor tmp({3, H, W}), out({3, H, W});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * img.v[(static_cast<std::size_t>(ch) * H + y) * W + refl(x + i, W)];
        tmp.v[(static_cast<std::size_t>(ch) * H + y) * W + x] = static_cast<float>(acc);
      }
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp.v[(static_cast<std::size_t>(ch) * H + refl(y + i, H)) * W + x];
        out.v[(static_cast<std::size_t>(ch) * H + y) * W + x] = clamp01(static_cast<float>(acc));
      }
  return out;
}

Tensor adjust_hsv(const Tensor& img, double dh, double sat_mul, double val_mul) {
  check_rgb(img);
  const int H = img.dim(1), W = img.dim(2);
  Tensor out({3, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t i = 0; i < plane; ++i) {
    float h, s, v;
    rgb_to_hsv(img.v[i], img.v[plane + i], img.v[2 * plane + i], h, s, v);
    h = static_cast<float>(h + dh);
    s = clamp01(static_cast<float>(s * sat_mul));
    v = clamp01(static_cast<float>(v * val_mul));
    float r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    out.v[i] = clamp01(r);
    out.v[plane + i] = clamp01(g);
    out.v[2 * plane + i] = clamp01(b);
  }
  return out;
}

Tensor hed_perturb(const Tensor& img, std::array<double, 3> factors) {
  check_rgb(img);
  if (factors[0] == 0.0 && factors[1] == 0.0 && factors[2] == 0.0) return img;
  static const StainMatrices m = make_stain_matrices();
  const int H = img.dim(1), W = img.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({3, H, W});
  for (std::size_t i = 0; i < plane; ++i) {
    double od[3], st[3], odp[3];
    const double rgb[3] = {img.v[i], img.v[plane + i], img.v[2 * plane + i]};
    for (int ch = 0; ch < 3; ++ch) od[ch] = -std::log10(std::max(rgb[ch], 1e-6));
    for (int sidx = 0; sidx < 3; ++sidx) {
      st[sidx] = od[0] * m.inv[0][sidx] + od[1] * m.inv[1][sidx] + od[2] * m.inv[2][sidx];
      st[sidx] = st[sidx] * (1.0 + factors[sidx]) + factors[sidx];
    }
    for (int ch = 0; ch < 3; ++ch) {
      odp[ch] = st[0] * m.fwd[0][ch] + st[1] * m.fwd[1][ch] + st[2] * m.fwd[2][ch];
      out.v[static_cast<std::size_t>(ch) * plane + i] =
          clamp01(static_cast<float>(std::pow(10.0, -odp[ch])));
    }
  }
  return out;
}

// ---- policies ----

static std::vector<TfSpec> base_transforms() {
  return {{Tf::rotate, -90, 90},
          {Tf::scale, 0.8, 1.2},
          {Tf::noise, 0.0, 0.1},
          {Tf::affine, 0.0625, 0.0625, 0.5, 0.5},
          {Tf::hue, -0.1, 0.1},
          {Tf::saturation, -1, 1},
          {Tf::brightness, -0.2, 0.2},
          {Tf::contrast, -0.2, 0.2},
          {Tf::blur, 3, 7},
          {Tf::hed, -0.035, 0.035}};
}

static std::vector<TfSpec> strong_transforms() {
  return {{Tf::rotate, -90, 90},
          {Tf::scale, 0.51, 0.60},
          {Tf::noise, 0.0, 0.1},
          {Tf::affine, 0.01, 0.1, 0.51, 0.60},
          {Tf::hsv, -1, 1},
          {Tf::saturation, -1, 1},
          {Tf::brightness, -0.2, 0.2},
          {Tf::contrast, -0.2, 0.2},
          {Tf::blur, 5, 7},
          {Tf::hed, -0.035, 0.035}};
}

AugPolicy weak_policy() {
  AugPolicy p;
  p.kind = "weak";
  p.transforms = {{Tf::hflip, 0, 1}, {Tf::crop_resize, 0.8, 1.0}};
  p.crop_min = 0.8;
  p.crop_max = 1.0;
  return p;
}

AugPolicy strong_policy(int n_aug) {
  AugPolicy p;
  p.kind = "strong";
  p.transforms = strong_transforms();
  p.n_aug = n_aug;
  return p;
}

AugPolicy pretrain_policy() {
  AugPolicy p;
  p.kind = "pretrain";
  p.transforms = base_transforms();
  p.shuffle_order = true;
  return p;
}

AugPolicy finetune_policy() {
  AugPolicy p;
  p.kind = "finetune";
  p.transforms = {{Tf::rotate, -90, 90}, {Tf::scale, 0.8, 1.2}, {Tf::crop_resize, 0.8, 1.0}};
  p.crop_min = 0.8;
  p.crop_max = 1.0;
  return p;
}

AugPolicy moco_policy() {
  AugPolicy p;
  p.kind = "moco";
  p.transforms = {{Tf::crop_resize, 0.6, 1.0},
                  {Tf::hflip, 0, 1},
                  {Tf::brightness, -0.4, 0.4},
                  {Tf::contrast, -0.4, 0.4},
                  {Tf::saturation, -0.4, 0.4},
                  {Tf::hue, -0.1, 0.1}};
  p.crop_min = 0.6;
  p.crop_max = 1.0;
  return p;
}

// Applies one transform with magnitude m in [mg_lo, mg_hi] mapped to
// t = (m-1)/9 in [0,1].
static Tensor apply_one(const Tensor& img, const TfSpec& spec, double m, const AugPolicy& pol,
                        Rng& rng) {
  const double t = std::clamp((m - 1.0) / 9.0, 0.0, 1.0);
  const int H = img.dim(1), W = img.dim(2);
  switch (spec.kind) {
    case Tf::hflip: {
      if (!rng.bernoulli(pol.flip_prob)) return img;
      Tensor out({3, H, W});
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            out.v[(static_cast<std::size_t>(ch) * H + y) * W + x] =
                img.v[(static_cast<std::size_t>(ch) * H + y) * W + (W - 1 - x)];
      return out;
    }
    case Tf::crop_resize: {
      const double frac = rng.uniform(pol.crop_min, pol.crop_max);
      const int side = std::max(2, static_cast<int>(std::lround(frac * std::min(H, W))));
      if (side >= H && side >= W) return img;
      const int y0 = rng.uniform_index(H - side + 1);
      const int x0 = rng.uniform_index(W - side + 1);
      Tensor cropped({3, side, side});
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x)
            cropped.v[(static_cast<std::size_t>(ch) * side + y) * side + x] =
                img.v[(static_cast<std::size_t>(ch) * H + y0 + y) * W + x0 + x];
      return resize_bilinear(cropped, H, W);
    }
    case Tf::rotate: {
      const double maxdeg = std::max(std::abs(spec.lo), std::abs(spec.hi));
      const double deg = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * maxdeg;
      const double th = deg * kPi / 180.0;
      return warp_affine(img, std::cos(th), -std::sin(th), std::sin(th), std::cos(th), 0, 0);
    }
    case Tf::scale: {
      double f;
      if (spec.lo < 1.0 && spec.hi > 1.0) {
        const double half = std::max(1.0 - spec.lo, spec.hi - 1.0);
        f = 1.0 + (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * half;
        f = std::clamp(f, spec.lo, spec.hi);
      } else {
        f = spec.lo + t * (spec.hi - spec.lo);
      }
      const double inv = 1.0 / f;
      return warp_affine(img, inv, 0, 0, inv, 0, 0);
    }
    case Tf::noise: {
      const double sigma = t * spec.hi;
      Tensor out = img;
      if (sigma > 0.0)
        for (auto& v : out.v) v = clamp01(v + static_cast<float>(rng.normal(0.0, sigma)));
      return out;
    }
    case Tf::affine: {
      // lo/hi = translate fraction; lo2/hi2 = scale limit. A degenerate
      // range (lo == hi) scales with magnitude from zero.
      const double tmax = spec.lo == spec.hi ? t * spec.lo : spec.lo + t * (spec.hi - spec.lo);
      const double slim =
          spec.lo2 == spec.hi2 ? t * spec.lo2 : spec.lo2 + t * (spec.hi2 - spec.lo2);
      const double dx = (rng.bernoulli(0.5) ? 1.0 : -1.0) * tmax * W;
      const double dy = (rng.bernoulli(0.5) ? 1.0 : -1.0) * tmax * H;
      const double deg = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * 45.0;
      const double f = std::max(0.1, 1.0 + (rng.bernoulli(0.5) ? 1.0 : -1.0) * slim);
      const double th = deg * kPi / 180.0;
      const double inv = 1.0 / f;
      return warp_affine(img, inv * std::cos(th), -inv * std::sin(th), inv * std::sin(th),
                         inv * std::cos(th), dx, dy);
    }
    case Tf::hue: {
      const double dh = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      return adjust_hsv(img, dh, 1.0, 1.0);
    }
    case Tf::saturation: {
      const double f = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      return adjust_hsv(img, 0.0, 1.0 + f, 1.0);
    }
    case Tf::brightness: {
      const double f = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      Tensor out = img;
      for (auto& v : out.v) v = clamp01(v * static_cast<float>(1.0 + f));
      return out;
    }
    case Tf::contrast: {
      const double f = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      double mean = 0.0;
      for (float v : img.v) mean += v;
      mean /= static_cast<double>(img.v.size());
      Tensor out = img;
      for (auto& v : out.v)
        v = clamp01(static_cast<float>(mean + (v - mean) * (1.0 + f)));
      return out;
    }
    case Tf::blur: {
      int k = static_cast<int>(std::lround(spec.lo + t * (spec.hi - spec.lo)));
      if (k % 2 == 0) ++k;
      k = std::clamp(k, 3, 9);
      return gaussian_blur(img, k);
    }
    case Tf::hed: {
      std::array<double, 3> f{};
      for (int i = 0; i < 3; ++i)
        f[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      return hed_perturb(img, f);
    }
    case Tf::hsv: {
      const double fh = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      const double fs = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      const double fv = (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * spec.hi;
      return adjust_hsv(img, fh, 1.0 + fs, 1.0 + fv);
    }
  }
  return img;
}

Tensor apply_policy(const Tensor& img, const AugPolicy& policy, Rng& rng, AugTrace* trace) {
  check_rgb(img);
  if (policy.transforms.empty()) return img;
  Tensor cur = img;
  if (policy.n_aug > 0) {
    for (int i = 0; i < policy.n_aug; ++i) {
      const int pick = rng.uniform_index(static_cast<int>(policy.transforms.size()));
      const double m = rng.uniform(policy.mg_lo, policy.mg_hi);
      if (trace) {
        trace->picks.push_back(pick);
        trace->magnitudes.push_back(m);
      }
      cur = apply_one(cur, policy.transforms[pick], m, policy, rng);
    }
    return cur;
  }
  std::vector<int> order(policy.transforms.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (policy.shuffle_order) rng.shuffle(order);
  for (int idx : order) {
    const double m = rng.uniform(policy.mg_lo, policy.mg_hi);
    if (trace) {
      trace->picks.push_back(idx);
      trace->magnitudes.push_back(m);
    }
    cur = apply_one(cur, policy.transforms[idx], m, policy, rng);
  }
  return cur;
}

Image apply_policy(const Image& img, const AugPolicy& policy, Rng& rng, AugTrace* trace) {
  if (img.c != 3 || img.empty()) throw ArgumentError("apply_policy: expected an RGB image");
  return from_tensor(apply_policy(to_tensor(img), policy, rng, trace));
}

Tensor weak_aug(const Tensor& img, Rng& rng) { return apply_policy(img, weak_policy(), rng); }
Tensor strong_aug(const Tensor& img, Rng& rng) { return apply_policy(img, strong_policy(), rng); }
Tensor pretrain_aug(const Tensor& img, Rng& rng) {
  return apply_policy(img, pretrain_policy(), rng);
}
Tensor finetune_aug(const Tensor& img, Rng& rng) {
  return apply_policy(img, finetune_policy(), rng);
}

std::string dump_policy(const AugPolicy& p) {
  std::ostringstream os;
  os << "policy " << p.kind << "\n";
  os << "n_aug " << p.n_aug << "\n";
  os << "magnitude_range [" << p.mg_lo << "," << p.mg_hi << "]\n";
  os << "shuffle_order " << (p.shuffle_order ? 1 : 0) << "\n";
  os << "flip_prob " << p.flip_prob << "\n";
  os << "crop_frac [" << p.crop_min << "," << p.crop_max << "]\n";
  for (const auto& t : p.transforms)
    os << "transform " << tf_name(t.kind) << " [" << t.lo << "," << t.hi << "]\n";
  return os.str();
}

}  // namespace rsp
