#pragma once

#include <cstddef>

#include "rsp/tensor.hpp"

// Dense NN kernels. Two variants of every kernel:
//
//   kern::ref  — straightforward serial loops, the reference used by tests
//   kern       — OpenMP versions parallelized over independent output slices
//
// The parallel variants keep the reference's per-element accumulation order
// and never let two threads write or accumulate into the same element, so
// their results are bit-identical to the reference for any thread count.
// Gradient kernels accumulate (+=) into their output tensors.

namespace rsp::kern {

inline int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace ref {

template <typename T>
void conv2d_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad,
                TensorT<T>& y) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = conv_out(H, K, stride, pad), Wo = conv_out(W, K, stride, pad);
  y.shape = {N, Co, Ho, Wo};
  y.v.assign(y.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = b.v[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < K; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < K; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += x.at4(n, ci, iy, ix) * w.at4(co, ci, ky, kx);
              }
            }
          y.at4(n, co, oy, ox) = acc;
        }
}

template <typename T>
void conv2d_bwd_input(const TensorT<T>& gy, const TensorT<T>& w, int stride, int pad, int H, int W,
                      TensorT<T>& gx) {
  const int N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int Ci = w.dim(1), K = w.dim(2);
  gx.shape = {N, Ci, H, W};
  gx.v.assign(gx.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int ci = 0; ci < Ci; ++ci)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T acc = T(0);
          for (int co = 0; co < Co; ++co)
            for (int ky = 0; ky < K; ++ky) {
              const int ty = iy + pad - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const int oy = ty / stride;
              if (oy >= Ho) continue;
              for (int kx = 0; kx < K; ++kx) {
                const int tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const int ox = tx / stride;
                if (ox >= Wo) continue;
                acc += gy.at4(n, co, oy, ox) * w.at4(co, ci, ky, kx);
              }
            }
          gx.at4(n, ci, iy, ix) = acc;
        }
}

template <typename T>
void conv2d_bwd_params(const TensorT<T>& x, const TensorT<T>& gy, int stride, int pad,
                       TensorT<T>& gw, TensorT<T>& gb) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int K = gw.dim(2);
  for (int co = 0; co < Co; ++co) {
    T accb = T(0);
    for (int n = 0; n < N; ++n)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) accb += gy.at4(n, co, oy, ox);
    gb.v[co] += accb;
    for (int ci = 0; ci < Ci; ++ci)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += x.at4(n, ci, iy, ix) * gy.at4(n, co, oy, ox);
              }
            }
          gw.at4(co, ci, ky, kx) += acc;
        }
  }
}

template <typename T>
void linear_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
  const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
  y.shape = {N, Out};
  y.v.assign(y.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Out; ++o) {
      T acc = b.v[o];
      const T* xr = x.data() + static_cast<std::size_t>(n) * In;
      const T* wr = w.data() + static_cast<std::size_t>(o) * In;
      for (int i = 0; i < In; ++i) acc += xr[i] * wr[i];
      y.at2(n, o) = acc;
    }
}

template <typename T>
void linear_bwd_input(const TensorT<T>& gy, const TensorT<T>& w, TensorT<T>& gx) {
  const int N = gy.dim(0), Out = gy.dim(1), In = w.dim(1);
  gx.shape = {N, In};
  gx.v.assign(gx.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < In; ++i) {
      T acc = T(0);
      for (int o = 0; o < Out; ++o) acc += gy.at2(n, o) * w.at2(o, i);
      gx.at2(n, i) = acc;
    }
}

template <typename T>
void linear_bwd_params(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gw, TensorT<T>& gb) {
  const int N = x.dim(0), In = x.dim(1), Out = gy.dim(1);
  for (int o = 0; o < Out; ++o) {
    T accb = T(0);
    for (int n = 0; n < N; ++n) accb += gy.at2(n, o);
    gb.v[o] += accb;
    for (int i = 0; i < In; ++i) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) acc += x.at2(n, i) * gy.at2(n, o);
      gw.at2(o, i) += acc;
    }
  }
}

template <typename T>
void relu_fwd(const TensorT<T>& x, TensorT<T>& y) {
  y.shape = x.shape;
  y.v.resize(x.v.size());
  for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
}

template <typename T>
void relu_bwd(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gx) {
  gx.shape = x.shape;
  gx.v.resize(x.v.size());
  for (std::size_t i = 0; i < x.v.size(); ++i) gx.v[i] = x.v[i] > T(0) ? gy.v[i] : T(0);
}

// 2x2 mean pooling, stride 2. Odd trailing row/col dropped.
template <typename T>
void avgpool2_fwd(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  y.shape = {N, C, Ho, Wo};
  y.v.assign(y.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T s = x.at4(n, c, 2 * oy, 2 * ox) + x.at4(n, c, 2 * oy, 2 * ox + 1) +
                      x.at4(n, c, 2 * oy + 1, 2 * ox) + x.at4(n, c, 2 * oy + 1, 2 * ox + 1);
          y.at4(n, c, oy, ox) = s * T(0.25);
        }
}

template <typename T>
void avgpool2_bwd(const TensorT<T>& gy, int H, int W, TensorT<T>& gx) {
  const int N = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  gx.shape = {N, C, H, W};
  gx.v.assign(gx.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T g = gy.at4(n, c, oy, ox) * T(0.25);
          gx.at4(n, c, 2 * oy, 2 * ox) = g;
          gx.at4(n, c, 2 * oy, 2 * ox + 1) = g;
          gx.at4(n, c, 2 * oy + 1, 2 * ox) = g;
          gx.at4(n, c, 2 * oy + 1, 2 * ox + 1) = g;
        }
}

// [N,C,H,W] -> [N,C]
template <typename T>
void global_avgpool_fwd(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y.shape = {N, C};
  y.v.assign(y.numel(), T(0));
  const T inv = T(1) / static_cast<T>(H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) acc += x.at4(n, c, iy, ix);
      y.at2(n, c) = acc * inv;
    }
}

template <typename T>
void global_avgpool_bwd(const TensorT<T>& gy, int H, int W, TensorT<T>& gx) {
  const int N = gy.dim(0), C = gy.dim(1);
  gx.shape = {N, C, H, W};
  gx.v.assign(gx.numel(), T(0));
  const T inv = T(1) / static_cast<T>(H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = gy.at2(n, c) * inv;
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) gx.at4(n, c, iy, ix) = g;
    }
}

template <typename T>
void upsample2_fwd(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y.shape = {N, C, 2 * H, 2 * W};
  y.v.assign(y.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          const T s = x.at4(n, c, iy, ix);
          y.at4(n, c, 2 * iy, 2 * ix) = s;
          y.at4(n, c, 2 * iy, 2 * ix + 1) = s;
          y.at4(n, c, 2 * iy + 1, 2 * ix) = s;
          y.at4(n, c, 2 * iy + 1, 2 * ix + 1) = s;
        }
}

template <typename T>
void upsample2_bwd(const TensorT<T>& gy, TensorT<T>& gx) {
  const int N = gy.dim(0), C = gy.dim(1), H = gy.dim(2) / 2, W = gy.dim(3) / 2;
  gx.shape = {N, C, H, W};
  gx.v.assign(gx.numel(), T(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix)
          gx.at4(n, c, iy, ix) = gy.at4(n, c, 2 * iy, 2 * ix) + gy.at4(n, c, 2 * iy, 2 * ix + 1) +
                                 gy.at4(n, c, 2 * iy + 1, 2 * ix) +
                                 gy.at4(n, c, 2 * iy + 1, 2 * ix + 1);
}

}  // namespace ref

// ---------------- OpenMP variants ----------------

template <typename T>
void conv2d_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad,
                TensorT<T>& y) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = conv_out(H, K, stride, pad), Wo = conv_out(W, K, stride, pad);
  y.shape = {N, Co, Ho, Wo};
  y.v.assign(y.numel(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = b.v[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < K; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* xr = x.data() + ((static_cast<std::size_t>(n) * Ci + ci) * H + iy) * W;
              const T* wr = w.data() + ((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K;
              for (int kx = 0; kx < K; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += xr[ix] * wr[kx];
              }
            }
          y.at4(n, co, oy, ox) = acc;
        }
}

template <typename T>
void conv2d_bwd_input(const TensorT<T>& gy, const TensorT<T>& w, int stride, int pad, int H, int W,
                      TensorT<T>& gx) {
  const int N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int Ci = w.dim(1), K = w.dim(2);
  gx.shape = {N, Ci, H, W};
  gx.v.assign(gx.numel(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int ci = 0; ci < Ci; ++ci)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          T acc = T(0);
          for (int co = 0; co < Co; ++co)
            for (int ky = 0; ky < K; ++ky) {
              const int ty = iy + pad - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const int oy = ty / stride;
              if (oy >= Ho) continue;
              for (int kx = 0; kx < K; ++kx) {
                const int tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const int ox = tx / stride;
                if (ox >= Wo) continue;
                acc += gy.at4(n, co, oy, ox) * w.at4(co, ci, ky, kx);
              }
            }
          gx.at4(n, ci, iy, ix) = acc;
        }
}

// Each thread owns one output channel's gw slice and gb entry.
template <typename T>
void conv2d_bwd_params(const TensorT<T>& x, const TensorT<T>& gy, int stride, int pad,
                       TensorT<T>& gw, TensorT<T>& gb) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int K = gw.dim(2);
#pragma omp parallel for schedule(static)
  for (int co = 0; co < Co; ++co) {
    T accb = T(0);
    for (int n = 0; n < N; ++n)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) accb += gy.at4(n, co, oy, ox);
    gb.v[co] += accb;
    for (int ci = 0; ci < Ci; ++ci)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* xr = x.data() + ((static_cast<std::size_t>(n) * Ci + ci) * H + iy) * W;
              const T* gr = gy.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho + oy) * Wo;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += xr[ix] * gr[ox];
              }
            }
          gw.at4(co, ci, ky, kx) += acc;
        }
  }
}

template <typename T>
void linear_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
  const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
  y.shape = {N, Out};
  y.v.assign(y.numel(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Out; ++o) {
      T acc = b.v[o];
      const T* xr = x.data() + static_cast<std::size_t>(n) * In;
      const T* wr = w.data() + static_cast<std::size_t>(o) * In;
      for (int i = 0; i < In; ++i) acc += xr[i] * wr[i];
      y.at2(n, o) = acc;
    }
}

template <typename T>
void linear_bwd_input(const TensorT<T>& gy, const TensorT<T>& w, TensorT<T>& gx) {
  const int N = gy.dim(0), Out = gy.dim(1), In = w.dim(1);
  gx.shape = {N, In};
  gx.v.assign(gx.numel(), T(0));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < In; ++i) {
      T acc = T(0);
      for (int o = 0; o < Out; ++o) acc += gy.at2(n, o) * w.at2(o, i);
      gx.at2(n, i) = acc;
    }
}

template <typename T>
void linear_bwd_params(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gw, TensorT<T>& gb) {
  const int N = x.dim(0), In = x.dim(1), Out = gy.dim(1);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < Out; ++o) {
    T accb = T(0);
    for (int n = 0; n < N; ++n) accb += gy.at2(n, o);
    gb.v[o] += accb;
    for (int i = 0; i < In; ++i) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) acc += x.at2(n, i) * gy.at2(n, o);
      gw.at2(o, i) += acc;
    }
  }
}

template <typename T>
void relu_fwd(const TensorT<T>& x, TensorT<T>& y) {
  y.shape = x.shape;
  y.v.resize(x.v.size());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.v.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
}

template <typename T>
void relu_bwd(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gx) {
  gx.shape = x.shape;
  gx.v.resize(x.v.size());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.v.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) gx.v[i] = x.v[i] > T(0) ? gy.v[i] : T(0);
}

template <typename T>
void avgpool2_fwd(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  y.shape = {N, C, Ho, Wo};
  y.v.assign(y.numel(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T s = x.at4(n, c, 2 * oy, 2 * ox) + x.at4(n, c, 2 * oy, 2 * ox + 1) +
                      x.at4(n, c, 2 * oy + 1, 2 * ox) + x.at4(n, c, 2 * oy + 1, 2 * ox + 1);
          y.at4(n, c, oy, ox) = s * T(0.25);
        }
}

template <typename T>
void avgpool2_bwd(const TensorT<T>& gy, int H, int W, TensorT<T>& gx) {
  ref::avgpool2_bwd(gy, H, W, gx);
}

template <typename T>
void global_avgpool_fwd(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y.shape = {N, C};
  y.v.assign(y.numel(), T(0));
  const T inv = T(1) / static_cast<T>(H * W);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      const T* xr = x.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) acc += xr[i];
      y.at2(n, c) = acc * inv;
    }
}

template <typename T>
void global_avgpool_bwd(const TensorT<T>& gy, int H, int W, TensorT<T>& gx) {
  ref::global_avgpool_bwd(gy, H, W, gx);
}

template <typename T>
void upsample2_fwd(const TensorT<T>& x, TensorT<T>& y) {
  ref::upsample2_fwd(x, y);
}

template <typename T>
void upsample2_bwd(const TensorT<T>& gy, TensorT<T>& gx) {
  ref::upsample2_bwd(gy, gx);
}

}  // namespace rsp::kern
