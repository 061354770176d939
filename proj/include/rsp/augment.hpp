#pragma once

#include <array>
#include <string>
#include <vector>

#include "rsp/image.hpp"
#include "rsp/rng.hpp"

namespace rsp {

// Transform identifiers. Geometric transforms use bilinear sampling with
// reflect padding; all outputs are clamped to [0,1].
enum class Tf {
  hflip,
  crop_resize,
  rotate,
  scale,
  noise,
  affine,
  hue,
  saturation,
  brightness,
  contrast,
  blur,
  hed,
  hsv
};

const char* tf_name(Tf t);

// One entry of a policy: a transform plus its resolved parameter range.
// Magnitude m in [1,10] maps linearly onto the range via t = (m-1)/9;
// symmetric transforms draw an independent sign.
struct TfSpec {
  Tf kind;
  double lo = 0.0, hi = 0.0;
  double lo2 = 0.0, hi2 = 0.0;  // secondary range (affine scale limit)
};

struct AugPolicy {
  std::string kind;  // pretrain | finetune | weak | strong | moco
  std::vector<TfSpec> transforms;
  int n_aug = 0;              // >0: draw n_aug transforms with replacement
  double mg_lo = 1.0, mg_hi = 10.0;
  bool shuffle_order = false; // apply all transforms in a shuffled order
  double flip_prob = 0.5;
  double crop_min = 0.8, crop_max = 1.0;  // crop side fraction for crop_resize
};

// Weak: horizontal flip + random crop-resize.
AugPolicy weak_policy();
// Strong: 7 draws (with replacement) from the hardened transform list,
// magnitude sampled uniformly in [1,10] per draw.
AugPolicy strong_policy(int n_aug = 7);
// Pretraining: the full transform list applied once each in shuffled order.
AugPolicy pretrain_policy();
// Fine-tuning: rotation (+-90 deg), scaling [0.8,1.2], random resized crop.
AugPolicy finetune_policy();
// Contrastive baseline: crop-resize + flip + color jitter with
// brightness/contrast/saturation factors in [0.6,1.4].
AugPolicy moco_policy();

// Optional record of the draws made while applying a policy.
struct AugTrace {
  std::vector<int> picks;
  std::vector<double> magnitudes;
};

// img is [3,H,W] with values in [0,1]. Deterministic given the rng state.
Tensor apply_policy(const Tensor& img, const AugPolicy& policy, Rng& rng,
                    AugTrace* trace = nullptr);
Image apply_policy(const Image& img, const AugPolicy& policy, Rng& rng,
                   AugTrace* trace = nullptr);

Tensor weak_aug(const Tensor& img, Rng& rng);
Tensor strong_aug(const Tensor& img, Rng& rng);
Tensor pretrain_aug(const Tensor& img, Rng& rng);
Tensor finetune_aug(const Tensor& img, Rng& rng);

// Stain-space perturbation: RGB -> optical density -> stain concentrations
// via the standard H&E(+DAB) deconvolution matrix; each concentration c is
// mapped to c*(1+f)+f; back to RGB, clamped. factors (0,0,0) short-circuits
// to the identity.
Tensor hed_perturb(const Tensor& img, std::array<double, 3> factors);

// Individual transforms, exposed for tests.
Tensor warp_affine(const Tensor& img, double a, double b, double c, double d, double tx,
                   double ty);
Tensor resize_bilinear(const Tensor& img, int oh, int ow);
Tensor gaussian_blur(const Tensor& img, int ksize);
Tensor adjust_hsv(const Tensor& img, double dh, double sat_mul, double val_mul);

std::string dump_policy(const AugPolicy& p);

}  // namespace rsp
