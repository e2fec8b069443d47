#pragma once

// Dense numeric kernels. Every kernel writes each output element from exactly
// one loop iteration with a serial inner reduction, so results are bit-equal
// whether the outer loop runs on one thread or many. Cross-element reductions
// use fixed 4096-element chunking (see chunked_sum) for the same reason.
//
// kernels::reference holds naive serial versions kept as test oracles and as
// the baseline for the kernel benchmark.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "countnet/tensor.hpp"

#if defined(_OPENMP)
#define COUNTNET_PRAGMA(x) _Pragma(#x)
#else
#define COUNTNET_PRAGMA(x)
#endif

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace countnet::kernels {

inline std::atomic<bool>& parallel_flag() {
#if defined(_OPENMP)
  static std::atomic<bool> flag{omp_get_max_threads() > 1};
#else
  static std::atomic<bool> flag{false};
#endif
  return flag;
}

inline bool parallel_enabled() { return parallel_flag().load(std::memory_order_relaxed); }
inline void set_parallel(bool on) { parallel_flag().store(on, std::memory_order_relaxed); }

using i64 = std::int64_t;

// ---------------------------------------------------------------------------
// matmul: c[b] = a[b] · b[b], independent (possibly broadcast) batch slots.

template <typename T>
void matmul(const T* a, const T* b, T* c, const std::size_t* a_off, const std::size_t* b_off,
            i64 batch, i64 m, i64 k, i64 n) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 bi = 0; bi < batch; ++bi) {
    for (i64 i = 0; i < m; ++i) {
      const T* __restrict arow = a + a_off[bi] + static_cast<std::size_t>(i) * k;
      const T* bmat = b + b_off[bi];
      T* __restrict crow = c + (static_cast<std::size_t>(bi) * m + i) * n;
      for (i64 j = 0; j < n; ++j) crow[j] = T(0);
      for (i64 kk = 0; kk < k; ++kk) {
        const T av = arow[kk];
        const T* __restrict brow = bmat + static_cast<std::size_t>(kk) * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// grad wrt a: da[b] += gc[b] · b[b]^T. Batch loop serial because broadcast
// slots may alias; the (i, kk) grid is parallel within a batch.
template <typename T>
void matmul_grad_a(const T* gc, const T* b, T* da, const std::size_t* a_off,
                   const std::size_t* b_off, i64 batch, i64 m, i64 k, i64 n) {
  const bool par = parallel_enabled();
  for (i64 bi = 0; bi < batch; ++bi) {
    const T* gmat = gc + static_cast<std::size_t>(bi) * m * n;
    const T* bmat = b + b_off[bi];
    T* damat = da + a_off[bi];
    COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
    for (i64 i = 0; i < m; ++i) {
      const T* __restrict grow = gmat + static_cast<std::size_t>(i) * n;
      T* __restrict darow = damat + static_cast<std::size_t>(i) * k;
      for (i64 kk = 0; kk < k; ++kk) {
        const T* __restrict brow = bmat + static_cast<std::size_t>(kk) * n;
        // fixed 8-lane accumulation so the reduction vectorizes without
        // compiler reassociation; lane layout is part of the kernel contract
        T lanes[8] = {};
        const i64 n8 = n - n % 8;
        for (i64 j = 0; j < n8; j += 8) {
          for (int l = 0; l < 8; ++l) lanes[l] += grow[j + l] * brow[j + l];
        }
        T acc = ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6])) +
                ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7]));
        for (i64 j = n8; j < n; ++j) acc += grow[j] * brow[j];
        darow[kk] += acc;
      }
    }
  }
}

// grad wrt b: db[b] += a[b]^T · gc[b].
template <typename T>
void matmul_grad_b(const T* a, const T* gc, T* db, const std::size_t* a_off,
                   const std::size_t* b_off, i64 batch, i64 m, i64 k, i64 n) {
  const bool par = parallel_enabled();
  for (i64 bi = 0; bi < batch; ++bi) {
    const T* amat = a + a_off[bi];
    const T* gmat = gc + static_cast<std::size_t>(bi) * m * n;
    T* dbmat = db + b_off[bi];
    COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
    for (i64 kk = 0; kk < k; ++kk) {
      T* __restrict dbrow = dbmat + static_cast<std::size_t>(kk) * n;
      for (i64 i = 0; i < m; ++i) {
        const T av = amat[static_cast<std::size_t>(i) * k + kk];
        const T* __restrict grow = gmat + static_cast<std::size_t>(i) * n;
        for (i64 j = 0; j < n; ++j) dbrow[j] += av * grow[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Axis-sliced kernels. A tensor axis is addressed as [outer, len, inner]:
// element (o, l, i) sits at (o * len + l) * inner + i.

template <typename T>
void softmax(const T* x, T* y, i64 outer, i64 len, i64 inner) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const T* xs = x + o * len * inner + i;
      T* ys = y + o * len * inner + i;
      T mx = xs[0];
      for (i64 l = 1; l < len; ++l) mx = std::max(mx, xs[l * inner]);
      double sum = 0.0;
      for (i64 l = 0; l < len; ++l) {
        T e = std::exp(xs[l * inner] - mx);
        ys[l * inner] = e;
        sum += static_cast<double>(e);
      }
      const T inv = static_cast<T>(1.0 / sum);
      for (i64 l = 0; l < len; ++l) ys[l * inner] *= inv;
    }
  }
}

// dx = y * (gy - sum(gy * y)) along the axis.
template <typename T>
void softmax_grad(const T* y, const T* gy, T* dx, i64 outer, i64 len, i64 inner) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + i;
      double dot = 0.0;
      for (i64 l = 0; l < len; ++l)
        dot += static_cast<double>(gy[base + l * inner]) * static_cast<double>(y[base + l * inner]);
      for (i64 l = 0; l < len; ++l) {
        const std::size_t p = base + l * inner;
        dx[p] += y[p] * (gy[p] - static_cast<T>(dot));
      }
    }
  }
}

template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* inv_std, i64 outer,
                i64 len, i64 inner, T eps) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + i;
      double mu = 0.0;
      for (i64 l = 0; l < len; ++l) mu += static_cast<double>(x[base + l * inner]);
      mu /= len;
      double var = 0.0;
      for (i64 l = 0; l < len; ++l) {
        double d = static_cast<double>(x[base + l * inner]) - mu;
        var += d * d;
      }
      var /= len;
      const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      const std::size_t slot = static_cast<std::size_t>(o) * inner + i;
      mean[slot] = static_cast<T>(mu);
      inv_std[slot] = static_cast<T>(is);
      for (i64 l = 0; l < len; ++l) {
        const std::size_t p = base + l * inner;
        T xhat = static_cast<T>((static_cast<double>(x[p]) - mu) * is);
        y[p] = xhat * gamma[l] + beta[l];
      }
    }
  }
}

// dx += inv_std * (g*gamma - mean(g*gamma) - xhat * mean(g*gamma*xhat)),
// dgamma += sum(g * xhat), dbeta += sum(g). Parameter grads are reduced
// serially over slices so accumulation order is fixed.
template <typename T>
void layer_norm_grad(const T* x, const T* gamma, const T* gy, const T* mean, const T* inv_std,
                     T* dx, T* dgamma, T* dbeta, i64 outer, i64 len, i64 inner) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + i;
      const std::size_t slot = static_cast<std::size_t>(o) * inner + i;
      const double mu = static_cast<double>(mean[slot]);
      const double is = static_cast<double>(inv_std[slot]);
      double s1 = 0.0, s2 = 0.0;
      for (i64 l = 0; l < len; ++l) {
        const std::size_t p = base + l * inner;
        double gg = static_cast<double>(gy[p]) * static_cast<double>(gamma[l]);
        double xhat = (static_cast<double>(x[p]) - mu) * is;
        s1 += gg;
        s2 += gg * xhat;
      }
      s1 /= len;
      s2 /= len;
      for (i64 l = 0; l < len; ++l) {
        const std::size_t p = base + l * inner;
        double gg = static_cast<double>(gy[p]) * static_cast<double>(gamma[l]);
        double xhat = (static_cast<double>(x[p]) - mu) * is;
        dx[p] += static_cast<T>(is * (gg - s1 - xhat * s2));
      }
    }
  }
  for (i64 l = 0; l < len; ++l) {
    double dg = 0.0, db = 0.0;
    for (i64 o = 0; o < outer; ++o) {
      for (i64 i = 0; i < inner; ++i) {
        const std::size_t p = (static_cast<std::size_t>(o) * len + l) * inner + i;
        const std::size_t slot = static_cast<std::size_t>(o) * inner + i;
        double xhat = (static_cast<double>(x[p]) - static_cast<double>(mean[slot])) *
                      static_cast<double>(inv_std[slot]);
        dg += static_cast<double>(gy[p]) * xhat;
        db += static_cast<double>(gy[p]);
      }
    }
    dgamma[l] += static_cast<T>(dg);
    dbeta[l] += static_cast<T>(db);
  }
}

template <typename T>
void mean_axis(const T* x, T* y, i64 outer, i64 len, i64 inner) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const T* xs = x + o * len * inner + i;
      double acc = 0.0;
      for (i64 l = 0; l < len; ++l) acc += static_cast<double>(xs[l * inner]);
      y[o * inner + i] = static_cast<T>(acc / len);
    }
  }
}

template <typename T>
void mean_axis_grad(const T* gy, T* dx, i64 outer, i64 len, i64 inner) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      const T g = gy[o * inner + i] / static_cast<T>(len);
      T* dxs = dx + o * len * inner + i;
      for (i64 l = 0; l < len; ++l) dxs[l * inner] += g;
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise maps.

// Exact (erf-based) GELU at the tensor's own precision.
template <typename T>
void gelu(const T* x, T* y, i64 n) {
  const bool par = parallel_enabled();
  const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 i = 0; i < n; ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
}

template <typename T>
void gelu_grad(const T* x, const T* gy, T* dx, i64 n) {
  const bool par = parallel_enabled();
  const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
  const T inv_sqrt2pi = static_cast<T>(0.3989422804014326779);
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 i = 0; i < n; ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
    dx[i] += gy[i] * (cdf + v * pdf);
  }
}

template <typename T>
void relu(const T* x, T* y, i64 n) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_grad(const T* x, const T* gy, T* dx, i64 n) {
  const bool par = parallel_enabled();
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 i = 0; i < n; ++i) {
    if (x[i] > T(0)) dx[i] += gy[i];
  }
}

// ---------------------------------------------------------------------------
// 3x3 "same" convolution on NHWC with stride 1.
// Weight layout: [kh, kw, cin, cout].

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y, i64 batch, i64 h, i64 wd, i64 cin,
            i64 cout, i64 kh, i64 kw) {
  const bool par = parallel_enabled();
  const i64 ph = kh / 2, pw = kw / 2;
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 b = 0; b < batch; ++b) {
    for (i64 oy = 0; oy < h; ++oy) {
      for (i64 ox = 0; ox < wd; ++ox) {
        T* out = y + ((b * h + oy) * wd + ox) * cout;
        for (i64 co = 0; co < cout; ++co) out[co] = bias[co];
        for (i64 dy = 0; dy < kh; ++dy) {
          const i64 iy = oy + dy - ph;
          if (iy < 0 || iy >= h) continue;
          for (i64 dx = 0; dx < kw; ++dx) {
            const i64 ix = ox + dx - pw;
            if (ix < 0 || ix >= wd) continue;
            const T* px = x + ((b * h + iy) * wd + ix) * cin;
            const T* wr = w + (dy * kw + dx) * cin * cout;
            for (i64 ci = 0; ci < cin; ++ci) {
              const T v = px[ci];
              const T* wrow = wr + ci * cout;
              for (i64 co = 0; co < cout; ++co) out[co] += v * wrow[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_grad_input(const T* gy, const T* w, T* dx, i64 batch, i64 h, i64 wd, i64 cin, i64 cout,
                       i64 kh, i64 kw) {
  const bool par = parallel_enabled();
  const i64 ph = kh / 2, pw = kw / 2;
  // transpose the (tiny) weight to [kh, kw, cout, cin] so the accumulation
  // over ci is a contiguous independent-update loop
  std::vector<T> wt(static_cast<std::size_t>(kh * kw * cin * cout));
  for (i64 dy = 0; dy < kh; ++dy)
    for (i64 dxk = 0; dxk < kw; ++dxk)
      for (i64 ci = 0; ci < cin; ++ci)
        for (i64 co = 0; co < cout; ++co)
          wt[((dy * kw + dxk) * cout + co) * cin + ci] = w[((dy * kw + dxk) * cin + ci) * cout + co];

  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 b = 0; b < batch; ++b) {
    for (i64 iy = 0; iy < h; ++iy) {
      for (i64 ix = 0; ix < wd; ++ix) {
        T* __restrict dpx = dx + ((b * h + iy) * wd + ix) * cin;
        for (i64 dy = 0; dy < kh; ++dy) {
          const i64 oy = iy - dy + ph;
          if (oy < 0 || oy >= h) continue;
          for (i64 dxk = 0; dxk < kw; ++dxk) {
            const i64 ox = ix - dxk + pw;
            if (ox < 0 || ox >= wd) continue;
            const T* grow = gy + ((b * h + oy) * wd + ox) * cout;
            const T* wbase = wt.data() + (dy * kw + dxk) * cout * cin;
            for (i64 co = 0; co < cout; ++co) {
              const T g = grow[co];
              const T* __restrict wrow = wbase + co * cin;
              for (i64 ci = 0; ci < cin; ++ci) dpx[ci] += g * wrow[ci];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_grad_weight(const T* x, const T* gy, T* dw, T* dbias, i64 batch, i64 h, i64 wd,
                        i64 cin, i64 cout, i64 kh, i64 kw) {
  const bool par = parallel_enabled();
  const i64 ph = kh / 2, pw = kw / 2;
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(3) if (par))
  for (i64 dy = 0; dy < kh; ++dy) {
    for (i64 dxk = 0; dxk < kw; ++dxk) {
      for (i64 ci = 0; ci < cin; ++ci) {
        T* dwrow = dw + ((dy * kw + dxk) * cin + ci) * cout;
        for (i64 b = 0; b < batch; ++b) {
          for (i64 oy = 0; oy < h; ++oy) {
            const i64 iy = oy + dy - ph;
            if (iy < 0 || iy >= h) continue;
            for (i64 ox = 0; ox < wd; ++ox) {
              const i64 ix = ox + dxk - pw;
              if (ix < 0 || ix >= wd) continue;
              const T v = x[((b * h + iy) * wd + ix) * cin + ci];
              const T* grow = gy + ((b * h + oy) * wd + ox) * cout;
              for (i64 co = 0; co < cout; ++co) dwrow[co] += v * grow[co];
            }
          }
        }
      }
    }
  }
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 co = 0; co < cout; ++co) {
    double acc = 0.0;
    const i64 pixels = batch * h * wd;
    for (i64 p = 0; p < pixels; ++p) acc += static_cast<double>(gy[p * cout + co]);
    dbias[co] += static_cast<T>(acc);
  }
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling, half-pixel centers: iy = (oy + 0.5)/2 - 0.5.

inline void up2x_taps(i64 o, i64 in_len, i64& i0, i64& i1, double& w1) {
  const double pos = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
  double f = std::floor(pos);
  i0 = static_cast<i64>(f);
  i1 = i0 + 1;
  w1 = pos - f;
  if (i0 < 0) i0 = 0;
  if (i1 > in_len - 1) i1 = in_len - 1;
}

template <typename T>
void upsample2x(const T* x, T* y, i64 batch, i64 h, i64 w, i64 c) {
  const bool par = parallel_enabled();
  const i64 oh = h * 2, ow = w * 2;
  COUNTNET_PRAGMA(omp parallel for schedule(static) collapse(2) if (par))
  for (i64 b = 0; b < batch; ++b) {
    for (i64 oy = 0; oy < oh; ++oy) {
      i64 y0, y1;
      double wy;
      up2x_taps(oy, h, y0, y1, wy);
      for (i64 ox = 0; ox < ow; ++ox) {
        i64 x0, x1;
        double wx;
        up2x_taps(ox, w, x0, x1, wx);
        const T* p00 = x + ((b * h + y0) * w + x0) * c;
        const T* p01 = x + ((b * h + y0) * w + x1) * c;
        const T* p10 = x + ((b * h + y1) * w + x0) * c;
        const T* p11 = x + ((b * h + y1) * w + x1) * c;
        T* out = y + ((b * oh + oy) * ow + ox) * c;
        const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
        const double w10 = wy * (1 - wx), w11 = wy * wx;
        for (i64 ch = 0; ch < c; ++ch) {
          out[ch] = static_cast<T>(w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch]);
        }
      }
    }
  }
}

// Scatter transpose of upsample2x. Parallel over batch only; each batch slot
// is written serially in a fixed order.
template <typename T>
void upsample2x_grad(const T* gy, T* dx, i64 batch, i64 h, i64 w, i64 c) {
  const bool par = parallel_enabled();
  const i64 oh = h * 2, ow = w * 2;
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 b = 0; b < batch; ++b) {
    for (i64 oy = 0; oy < oh; ++oy) {
      i64 y0, y1;
      double wy;
      up2x_taps(oy, h, y0, y1, wy);
      for (i64 ox = 0; ox < ow; ++ox) {
        i64 x0, x1;
        double wx;
        up2x_taps(ox, w, x0, x1, wx);
        const T* g = gy + ((b * oh + oy) * ow + ox) * c;
        T* d00 = dx + ((b * h + y0) * w + x0) * c;
        T* d01 = dx + ((b * h + y0) * w + x1) * c;
        T* d10 = dx + ((b * h + y1) * w + x0) * c;
        T* d11 = dx + ((b * h + y1) * w + x1) * c;
        const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
        const double w10 = wy * (1 - wx), w11 = wy * wx;
        for (i64 ch = 0; ch < c; ++ch) {
          d00[ch] += static_cast<T>(w00 * g[ch]);
          d01[ch] += static_cast<T>(w01 * g[ch]);
          d10[ch] += static_cast<T>(w10 * g[ch]);
          d11[ch] += static_cast<T>(w11 * g[ch]);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Data movement.

template <typename T>
void permute_copy(const T* x, T* y, const Shape& in_shape, const std::vector<std::size_t>& perm) {
  const std::size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = in_shape[perm[d]];
  const Shape in_strides = row_major_strides(in_shape);
  // stride of output dim d in the input layout
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) src_stride[d] = in_strides[perm[d]];

  const i64 n = static_cast<i64>(numel(in_shape));
  const i64 outer = static_cast<i64>(out_shape[0]);
  const i64 per = n / outer;
  const i64 last = static_cast<i64>(out_shape[rank - 1]);
  const std::size_t last_stride = src_stride[rank - 1];
  const i64 runs = per / last;
  const bool par = parallel_enabled() && per >= 64;
  COUNTNET_PRAGMA(omp parallel for schedule(static) if (par))
  for (i64 o = 0; o < outer; ++o) {
    std::vector<std::size_t> idx(rank, 0);
    idx[0] = static_cast<std::size_t>(o);
    std::size_t src = idx[0] * src_stride[0];
    T* __restrict yrow = y + o * per;
    for (i64 run = 0; run < runs; ++run) {
      const T* __restrict xs = x + src;
      if (last_stride == 1) {
        for (i64 e = 0; e < last; ++e) yrow[e] = xs[e];
      } else {
        for (i64 e = 0; e < last; ++e) yrow[e] = xs[e * last_stride];
      }
      yrow += last;
      for (std::size_t d = rank - 1; d-- > 1;) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Reference implementations: naive, serial, no chunking tricks.

namespace reference {

template <typename T>
void matmul(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      T acc = T(0);
      for (i64 kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void softmax(const T* x, T* y, i64 n) {
  T mx = x[0];
  for (i64 i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = T(0);
  for (i64 i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (i64 i = 0; i < n; ++i) y[i] /= sum;
}

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y, i64 batch, i64 h, i64 wd, i64 cin,
            i64 cout, i64 kh, i64 kw) {
  const i64 ph = kh / 2, pw = kw / 2;
  for (i64 b = 0; b < batch; ++b)
    for (i64 oy = 0; oy < h; ++oy)
      for (i64 ox = 0; ox < wd; ++ox)
        for (i64 co = 0; co < cout; ++co) {
          T acc = bias[co];
          for (i64 dy = 0; dy < kh; ++dy)
            for (i64 dx = 0; dx < kw; ++dx) {
              const i64 iy = oy + dy - ph, ix = ox + dx - pw;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              for (i64 ci = 0; ci < cin; ++ci)
                acc += x[((b * h + iy) * wd + ix) * cin + ci] * w[((dy * kw + dx) * cin + ci) * cout + co];
            }
          y[((b * h + oy) * wd + ox) * cout + co] = acc;
        }
}

}  // namespace reference

}  // namespace countnet::kernels
