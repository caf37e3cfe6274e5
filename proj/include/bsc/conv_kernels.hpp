#pragma once

#include <cstdint>

namespace bsc::kernels {

// Valid (no-padding) 2-D convolution geometry. in: [H,W,Cin] row-major,
// weights: [kh,kw,Cin,Cout], bias: [Cout], out: [H',W',Cout] with
// H' = (H - kh) / stride + 1.
struct Conv2dDims {
    int in_h = 0, in_w = 0, in_c = 0;
    int kh = 0, kw = 0, out_c = 0;
    int stride = 1;

    int out_h() const { return (in_h - kh) / stride + 1; }
    int out_w() const { return (in_w - kw) / stride + 1; }
};

// out[y,x,o] = bias[o] + sum_{dy,dx,i} in[y*s+dy, x*s+dx, i] * w[dy,dx,i,o],
// then max(0, .) when relu is set.
//
// The serial variant is the reference. The OpenMP variant distributes
// output rows across threads; each output element is still produced by the
// same single-threaded inner summation in the same order, so the two are
// bit-identical for any thread count.
void conv2d_forward_serial(const float* in, const float* weights, const float* bias,
                           float* out, const Conv2dDims& d, bool relu);
void conv2d_forward_omp(const float* in, const float* weights, const float* bias,
                        float* out, const Conv2dDims& d, bool relu);

// Dispatch: OpenMP for outputs large enough to amortize the fork, serial
// otherwise. Identical results either way.
void conv2d_forward(const float* in, const float* weights, const float* bias,
                    float* out, const Conv2dDims& d, bool relu);

// Backward pass for one layer given d_pre, the loss gradient w.r.t. the
// pre-activation output (ReLU gating already applied by the caller).
// Accumulates into d_weights [kh,kw,Cin,Cout] and d_bias [Cout]; d_in
// [H,W,Cin] is overwritten when non-null. Serial on purpose: training
// parallelism lives at the batch level where the reduction order is fixed.
void conv2d_backward(const float* in, const float* weights, const float* d_pre,
                     float* d_weights, float* d_bias, float* d_in, const Conv2dDims& d);

}  // namespace bsc::kernels
