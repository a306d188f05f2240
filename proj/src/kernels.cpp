#include "snpx/kernels.hpp"

#include <stdexcept>

namespace snpx::kernels {

namespace {

// Work cutoff below which the OpenMP versions stay single-threaded.
constexpr long kParallelCutoff = 32768;

// Reductions use four explicit accumulators combined in a fixed order.
// This breaks the FMA dependency chain without handing the compiler a
// licence to reassociate, so serial and parallel builds agree bit-for-bit.
inline float dot4(const float* a, const float* b, int n) {
  float c0 = 0.0f, c1 = 0.0f, c2 = 0.0f, c3 = 0.0f;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    c0 += a[i] * b[i];
    c1 += a[i + 1] * b[i + 1];
    c2 += a[i + 2] * b[i + 2];
    c3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) c0 += a[i] * b[i];
  return (c0 + c1) + (c2 + c3);
}

// Strided dot: sum_k a[k*sa] * b[k*sb], same 4-way accumulator scheme.
inline float dot4_strided(const float* a, long sa, const float* b, long sb, int n) {
  float c0 = 0.0f, c1 = 0.0f, c2 = 0.0f, c3 = 0.0f;
  int k = 0;
  for (; k + 4 <= n; k += 4) {
    c0 += a[(k + 0) * sa] * b[(k + 0) * sb];
    c1 += a[(k + 1) * sa] * b[(k + 1) * sb];
    c2 += a[(k + 2) * sa] * b[(k + 2) * sb];
    c3 += a[(k + 3) * sa] * b[(k + 3) * sb];
  }
  for (; k < n; ++k) c0 += a[k * sa] * b[k * sb];
  return (c0 + c1) + (c2 + c3);
}

// One output pixel of a convolution. Interior pixels take a check-free path
// that accumulates one patch row at a time into four round-robin partials;
// border pixels (padding only) fall back to bounds-checked loops. A given
// pixel always takes the same path, so results stay reproducible.
inline float conv_pixel(const float* x, const float* w, int cin, int h, int wd,
                        int k, int stride, int pad, int oh, int ow) {
  const int ih0 = oh * stride - pad;
  const int iw0 = ow * stride - pad;
  float c0 = 0.0f, c1 = 0.0f, c2 = 0.0f, c3 = 0.0f;
  if (ih0 >= 0 && iw0 >= 0 && ih0 + k <= h && iw0 + k <= wd) {
    int r = 0;
    for (int ci = 0; ci < cin; ++ci) {
      const float* xc = x + (static_cast<long>(ci) * h + ih0) * wd + iw0;
      const float* wc = w + static_cast<long>(ci) * k * k;
      for (int kh = 0; kh < k; ++kh, ++r) {
        const float* xrow = xc + static_cast<long>(kh) * wd;
        const float* wrow = wc + static_cast<long>(kh) * k;
        float s = 0.0f;
        for (int kw = 0; kw < k; ++kw) s += xrow[kw] * wrow[kw];
        switch (r & 3) {
          case 0: c0 += s; break;
          case 1: c1 += s; break;
          case 2: c2 += s; break;
          default: c3 += s; break;
        }
      }
    }
    return (c0 + c1) + (c2 + c3);
  }
  int r = 0;
  for (int ci = 0; ci < cin; ++ci) {
    for (int kh = 0; kh < k; ++kh, ++r) {
      const int ih = ih0 + kh;
      if (ih < 0 || ih >= h) continue;
      const float* xrow = x + (static_cast<long>(ci) * h + ih) * wd;
      const float* wrow = w + (static_cast<long>(ci) * k + kh) * k;
      float s = 0.0f;
      for (int kw = 0; kw < k; ++kw) {
        const int iw = iw0 + kw;
        if (iw < 0 || iw >= wd) continue;
        s += xrow[iw] * wrow[kw];
      }
      switch (r & 3) {
        case 0: c0 += s; break;
        case 1: c1 += s; break;
        case 2: c2 += s; break;
        default: c3 += s; break;
      }
    }
  }
  return (c0 + c1) + (c2 + c3);
}

// One input pixel's gradient: gathers from every output position whose
// receptive field covers (ci, ih, iw). Only kernel offsets congruent to
// (ih + pad) mod stride can contribute, so the loops step by `stride`
// instead of testing divisibility per element.
inline float conv_input_grad_pixel(const float* w, const float* dy, int cin,
                                   int cout, int ho, int wo, int k, int stride,
                                   int pad, int ci, int ih, int iw) {
  const int kh0 = (ih + pad) % stride;
  const int kw0 = (iw + pad) % stride;
  float acc = 0.0f;
  for (int co = 0; co < cout; ++co) {
    const float* dyc = dy + static_cast<long>(co) * ho * wo;
    const float* wc = w + (static_cast<long>(co) * cin + ci) * k * k;
    for (int kh = kh0; kh < k; kh += stride) {
      const int oh = (ih + pad - kh) / stride;
      if (oh < 0 || oh >= ho) continue;
      for (int kw = kw0; kw < k; kw += stride) {
        const int ow = (iw + pad - kw) / stride;
        if (ow < 0 || ow >= wo) continue;
        acc += dyc[oh * wo + ow] * wc[kh * k + kw];
      }
    }
  }
  return acc;
}

// One weight's gradient: correlation of dy[co] with the x[ci] patch track.
// Rows whose whole span is in bounds use a strided dot; border rows keep
// the per-element check.
inline float conv_weight_grad(const float* x, const float* dy, int h, int wd,
                              int ho, int wo, int stride, int pad, int ci,
                              int co, int kh, int kw) {
  const float* xc = x + static_cast<long>(ci) * h * wd;
  const float* dyc = dy + static_cast<long>(co) * ho * wo;
  const int iw_first = -pad + kw;
  const int iw_last = (wo - 1) * stride - pad + kw;
  const bool row_interior = iw_first >= 0 && iw_last < wd;
  float acc = 0.0f;
  for (int oh = 0; oh < ho; ++oh) {
    const int ih = oh * stride - pad + kh;
    if (ih < 0 || ih >= h) continue;
    const float* xrow = xc + static_cast<long>(ih) * wd;
    if (row_interior) {
      acc += dot4_strided(dyc + static_cast<long>(oh) * wo, 1, xrow + iw_first, stride, wo);
      continue;
    }
    for (int ow = 0; ow < wo; ++ow) {
      const int iw = ow * stride - pad + kw;
      if (iw < 0 || iw >= wd) continue;
      acc += dyc[oh * wo + ow] * xrow[iw];
    }
  }
  return acc;
}

}  // namespace

int conv_out_dim(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  if (span < 0 || stride <= 0) throw std::invalid_argument("bad conv geometry");
  return span / stride + 1;
}

// ---- OpenMP versions ----

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int in_dim, int out_dim) {
  const long work = static_cast<long>(in_dim) * out_dim;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int o = 0; o < out_dim; ++o) {
    y[o] = b[o] + dot4(w + static_cast<long>(o) * in_dim, x, in_dim);
  }
}

void dense_backward_input(const float* w, const float* dy, float* dx,
                          int in_dim, int out_dim) {
  const long work = static_cast<long>(in_dim) * out_dim;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < in_dim; ++i) {
    dx[i] += dot4_strided(w + i, in_dim, dy, 1, out_dim);
  }
}

void dense_backward_params(const float* x, const float* dy, float* dw, float* db,
                           int in_dim, int out_dim) {
  const long work = static_cast<long>(in_dim) * out_dim;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int o = 0; o < out_dim; ++o) {
    float* dwo = dw + static_cast<long>(o) * in_dim;
    const float g = dy[o];
    for (int i = 0; i < in_dim; ++i) dwo[i] += g * x[i];
    db[o] += g;
  }
}

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  const long work = static_cast<long>(cout) * ho * wo * cin * k * k;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int co = 0; co < cout; ++co) {
    const float* wc = w + static_cast<long>(co) * cin * k * k;
    float* yc = y + static_cast<long>(co) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        yc[oh * wo + ow] = b[co] + conv_pixel(x, wc, cin, h, wd, k, stride, pad, oh, ow);
      }
    }
  }
}

void conv2d_backward_input(const float* w, const float* dy, float* dx,
                           int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  const long work = static_cast<long>(cout) * ho * wo * cin * k * k;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int ci = 0; ci < cin; ++ci) {
    float* dxc = dx + static_cast<long>(ci) * h * wd;
    for (int ih = 0; ih < h; ++ih) {
      for (int iw = 0; iw < wd; ++iw) {
        dxc[ih * wd + iw] += conv_input_grad_pixel(w, dy, cin, cout, ho, wo, k,
                                                   stride, pad, ci, ih, iw);
      }
    }
  }
}

void conv2d_backward_params(const float* x, const float* dy, float* dw, float* db,
                            int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  const long work = static_cast<long>(cout) * ho * wo * cin * k * k;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      float* dwp = dw + ((static_cast<long>(co) * cin + ci) * k) * k;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          dwp[kh * k + kw] +=
              conv_weight_grad(x, dy, h, wd, ho, wo, stride, pad, ci, co, kh, kw);
        }
      }
    }
    const float* dyc = dy + static_cast<long>(co) * ho * wo;
    float acc = 0.0f;
    for (int i = 0; i < ho * wo; ++i) acc += dyc[i];
    db[co] += acc;
  }
}

// ---- Serial reference versions ----

namespace serial {

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int in_dim, int out_dim) {
  for (int o = 0; o < out_dim; ++o) {
    y[o] = b[o] + dot4(w + static_cast<long>(o) * in_dim, x, in_dim);
  }
}

void dense_backward_input(const float* w, const float* dy, float* dx,
                          int in_dim, int out_dim) {
  for (int i = 0; i < in_dim; ++i) {
    dx[i] += dot4_strided(w + i, in_dim, dy, 1, out_dim);
  }
}

void dense_backward_params(const float* x, const float* dy, float* dw, float* db,
                           int in_dim, int out_dim) {
  for (int o = 0; o < out_dim; ++o) {
    float* dwo = dw + static_cast<long>(o) * in_dim;
    const float g = dy[o];
    for (int i = 0; i < in_dim; ++i) dwo[i] += g * x[i];
    db[o] += g;
  }
}

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  for (int co = 0; co < cout; ++co) {
    const float* wc = w + static_cast<long>(co) * cin * k * k;
    float* yc = y + static_cast<long>(co) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        yc[oh * wo + ow] = b[co] + conv_pixel(x, wc, cin, h, wd, k, stride, pad, oh, ow);
      }
    }
  }
}

void conv2d_backward_input(const float* w, const float* dy, float* dx,
                           int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  for (int ci = 0; ci < cin; ++ci) {
    float* dxc = dx + static_cast<long>(ci) * h * wd;
    for (int ih = 0; ih < h; ++ih) {
      for (int iw = 0; iw < wd; ++iw) {
        dxc[ih * wd + iw] += conv_input_grad_pixel(w, dy, cin, cout, ho, wo, k,
                                                   stride, pad, ci, ih, iw);
      }
    }
  }
}

void conv2d_backward_params(const float* x, const float* dy, float* dw, float* db,
                            int cin, int h, int wd, int cout, int k, int stride, int pad) {
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      float* dwp = dw + ((static_cast<long>(co) * cin + ci) * k) * k;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          dwp[kh * k + kw] +=
              conv_weight_grad(x, dy, h, wd, ho, wo, stride, pad, ci, co, kh, kw);
        }
      }
    }
    const float* dyc = dy + static_cast<long>(co) * ho * wo;
    float acc = 0.0f;
    for (int i = 0; i < ho * wo; ++i) acc += dyc[i];
    db[co] += acc;
  }
}

}  // namespace serial

}  // namespace snpx::kernels
