#pragma once

namespace snpx::kernels {

// Hot numeric loops. The functions in this namespace carry OpenMP pragmas
// (gated by an `if` clause so small problems stay on one thread); the
// `serial` namespace holds plain-loop reference versions with identical
// semantics. Tests assert bit-equality between the two.
//
// All backward kernels *accumulate* into the gradient buffers, and every
// loop is written gather-style (each output element owned by one iteration)
// so the parallel versions are race-free and bit-reproducible.

int conv_out_dim(int in, int k, int stride, int pad);

// y[o] = b[o] + sum_i w[o*in_dim + i] * x[i]
void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int in_dim, int out_dim);
void dense_backward_input(const float* w, const float* dy, float* dx,
                          int in_dim, int out_dim);
void dense_backward_params(const float* x, const float* dy, float* dw, float* db,
                           int in_dim, int out_dim);

// x: [cin,h,w]  w: [cout,cin,k,k]  b: [cout]  y: [cout,ho,wo]
void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    int cin, int h, int wd, int cout, int k, int stride, int pad);
void conv2d_backward_input(const float* w, const float* dy, float* dx,
                           int cin, int h, int wd, int cout, int k, int stride, int pad);
void conv2d_backward_params(const float* x, const float* dy, float* dw, float* db,
                            int cin, int h, int wd, int cout, int k, int stride, int pad);

namespace serial {

void dense_forward(const float* x, const float* w, const float* b, float* y,
                   int in_dim, int out_dim);
void dense_backward_input(const float* w, const float* dy, float* dx,
                          int in_dim, int out_dim);
void dense_backward_params(const float* x, const float* dy, float* dw, float* db,
                           int in_dim, int out_dim);

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    int cin, int h, int wd, int cout, int k, int stride, int pad);
void conv2d_backward_input(const float* w, const float* dy, float* dx,
                           int cin, int h, int wd, int cout, int k, int stride, int pad);
void conv2d_backward_params(const float* x, const float* dy, float* dw, float* db,
                            int cin, int h, int wd, int cout, int k, int stride, int pad);

}  // namespace serial

}  // namespace snpx::kernels
