#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rsp/augment.hpp"

using namespace rsp;

namespace {

Tensor textured(int h, int w, std::uint64_t seed, float lo = 0.1f, float hi = 0.9f) {
  Rng rng = Rng::derive(seed, "tex");
  Tensor t({3, h, w});
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensor constant(int h, int w, float r, float g, float b) {
  Tensor t({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    t.v[i] = r;
    t.v[plane + i] = g;
    t.v[2 * plane + i] = b;
  }
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.v[i]) - b.v[i]));
  return m;
}

bool in01(const Tensor& t) {
  for (float v : t.v)
    if (v < 0.0f || v > 1.0f || !std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST_CASE("weak policy with flip off and full-frame crop is the identity") {
  AugPolicy p = weak_policy();
  p.flip_prob = 0.0;
  p.crop_min = p.crop_max = 1.0;
  Rng rng = Rng::derive(1, "aug");
  const Tensor img = textured(16, 16, 1);
  const Tensor out = apply_policy(img, p, rng);
  CHECK(max_abs_diff(img, out) <= 1e-6);
}

TEST_CASE("weak on a constant image stays constant") {
  Rng rng = Rng::derive(2, "aug");
  const Tensor img = constant(16, 16, 0.3f, 0.5f, 0.7f);
  const Tensor out = weak_aug(img, rng);
  const std::size_t plane = 16 * 16;
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK(out.v[i] == doctest::Approx(0.3).epsilon(1e-5));
    CHECK(out.v[plane + i] == doctest::Approx(0.5).epsilon(1e-5));
  }
}

TEST_CASE("policies are deterministic under a fixed rng state") {
  const Tensor img = textured(16, 16, 3);
  for (const AugPolicy& p :
       {weak_policy(), strong_policy(), pretrain_policy(), finetune_policy(), moco_policy()}) {
    Rng a = Rng::derive(7, "aug");
    Rng b = Rng::derive(7, "aug");
    const Tensor o1 = apply_policy(img, p, a);
    const Tensor o2 = apply_policy(img, p, b);
    CHECK(max_abs_diff(o1, o2) == 0.0);
    CHECK(in01(o1));
  }
}

TEST_CASE("strong policy applies exactly 7 transforms with magnitudes in range") {
  const Tensor img = textured(12, 12, 4);
  Rng rng = Rng::derive(9, "aug");
  for (int i = 0; i < 1000; ++i) {
    AugTrace trace;
    apply_policy(img, strong_policy(), rng, &trace);
    REQUIRE(trace.magnitudes.size() == 7);
    for (double m : trace.magnitudes) {
      CHECK(m >= 1.0);
      CHECK(m <= 10.0);
    }
    for (int pick : trace.picks) {
      CHECK(pick >= 0);
      CHECK(pick < 10);
    }
  }
}

TEST_CASE("strong output differs from weak on textured input") {
  const Tensor img = textured(16, 16, 5);
  int differs = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rw = Rng::derive(100 + i, "w");
    Rng rs = Rng::derive(100 + i, "s");
    const Tensor w = weak_aug(img, rw);
    const Tensor s = strong_aug(img, rs);
    if (max_abs_diff(w, s) > 0.0) ++differs;
  }
  CHECK(differs >= 99);
}

TEST_CASE("pretrain policy applies the whole transform list") {
  const Tensor img = textured(16, 16, 6);
  Rng rng = Rng::derive(11, "aug");
  AugTrace trace;
  apply_policy(img, pretrain_policy(), rng, &trace);
  CHECK(trace.picks.size() == 10);
  std::vector<int> sorted = trace.picks;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[i] == i);  // each applied once
}

TEST_CASE("finetune rotation angles stay within +-90 degrees") {
  // rotate by t*90 with random sign: the rotation matrix diagonal is
  // cos(angle) >= cos(90 deg) = 0, checked indirectly by re-applying the
  // transform primitives; here we audit the policy's declared range.
  const AugPolicy p = finetune_policy();
  REQUIRE(p.transforms.size() == 3);
  CHECK(p.transforms[0].kind == Tf::rotate);
  CHECK(p.transforms[0].lo == -90);
  CHECK(p.transforms[0].hi == 90);
  CHECK(p.transforms[1].kind == Tf::scale);
  CHECK(p.transforms[1].lo == doctest::Approx(0.8));
  CHECK(p.transforms[1].hi == doctest::Approx(1.2));
  CHECK(p.transforms[2].kind == Tf::crop_resize);
}

TEST_CASE("hed round-trip with zero factors is the identity") {
  const Tensor img = textured(8, 8, 7, 0.1f, 0.9f);
  const Tensor out = hed_perturb(img, {0.0, 0.0, 0.0});
  CHECK(max_abs_diff(img, out) == 0.0);  // short-circuit
}

TEST_CASE("hed forward/backward reconstruction error is small in-gamut") {
  const Tensor img = textured(8, 8, 8, 0.1f, 0.9f);
  // tiny non-zero factor exercises the full deconvolution path
  const Tensor out = hed_perturb(img, {1e-12, 0.0, 0.0});
  double mean_err = 0;
  for (std::size_t i = 0; i < img.v.size(); ++i)
    mean_err += std::abs(static_cast<double>(img.v[i]) - out.v[i]);
  mean_err /= static_cast<double>(img.v.size());
  CHECK(mean_err <= 2.0 / 255.0);
}

TEST_CASE("hed at range extremes stays in gamut") {
  const Tensor img = textured(8, 8, 9);
  for (double f : {-0.035, 0.035}) {
    const Tensor out = hed_perturb(img, {f, f, f});
    CHECK(in01(out));
  }
}

TEST_CASE("hed on gray input shifts mean monotonically with factor sign") {
  const Tensor img = constant(8, 8, 0.5f, 0.5f, 0.5f);
  auto mean_of = [](const Tensor& t) {
    double s = 0;
    for (float v : t.v) s += v;
    return s / static_cast<double>(t.v.size());
  };
  const double base = mean_of(hed_perturb(img, {1e-9, 1e-9, 1e-9}));
  const double up = mean_of(hed_perturb(img, {-0.03, -0.03, -0.03}));
  const double down = mean_of(hed_perturb(img, {0.03, 0.03, 0.03}));
  // positive factors add stain (more optical density -> darker)
  CHECK(down < base);
  CHECK(up > base);
}

TEST_CASE("magnitude-zero transforms act as the identity where defined") {
  const Tensor img = textured(16, 16, 10);
  // noise, hue, saturation, brightness, contrast, hed admit zero magnitude
  for (Tf kind : {Tf::noise, Tf::hue, Tf::saturation, Tf::brightness, Tf::contrast, Tf::hed}) {
    AugPolicy p;
    p.kind = "probe";
    TfSpec spec;
    spec.kind = kind;
    switch (kind) {
      case Tf::noise: spec.lo = 0.0; spec.hi = 0.1; break;
      case Tf::hue: spec.lo = -0.1; spec.hi = 0.1; break;
      case Tf::hed: spec.lo = -0.035; spec.hi = 0.035; break;
      default: spec.lo = -1; spec.hi = 1; break;
    }
    p.transforms = {spec};
    p.mg_lo = p.mg_hi = 1.0;  // magnitude 1 maps to t = 0
    Rng rng = Rng::derive(12, "aug");
    const Tensor out = apply_policy(img, p, rng);
    INFO("transform " << tf_name(kind));
    CHECK(max_abs_diff(img, out) <= 1e-6);
  }
}

TEST_CASE("geometric transforms preserve shape and clamp values") {
  const Tensor img = textured(20, 14, 11);
  Rng rng = Rng::derive(13, "aug");
  for (int i = 0; i < 50; ++i) {
    const Tensor s = strong_aug(img, rng);
    CHECK(s.dim(1) == 20);
    CHECK(s.dim(2) == 14);
    CHECK(in01(s));
  }
}

TEST_CASE("non-rgb input is rejected") {
  Tensor bad({1, 8, 8});
  Rng rng = Rng::derive(14, "aug");
  CHECK_THROWS_AS(weak_aug(bad, rng), ArgumentError);
  Image gray(8, 8, 1);
  CHECK_THROWS_AS(apply_policy(gray, weak_policy(), rng), ArgumentError);
}

TEST_CASE("dump-policy lists every transform with its range") {
  const std::string d = dump_policy(strong_policy());
  CHECK(d.find("policy strong") != std::string::npos);
  CHECK(d.find("n_aug 7") != std::string::npos);
  CHECK(d.find("hed [-0.035,0.035]") != std::string::npos);
  CHECK(d.find("blur [5,7]") != std::string::npos);
}
