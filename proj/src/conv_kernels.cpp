#include "bsc/conv_kernels.hpp"

#include <cstring>

namespace bsc::kernels {

namespace {

// One output row. The o-loop is innermost so it runs over contiguous
// weight/output memory and vectorizes.
inline void forward_row(const float* in, const float* weights, const float* bias,
                        float* out, const Conv2dDims& d, bool relu, int y) {
    const int out_w = d.out_w();
    const int in_row = d.in_w * d.in_c;
    float* out_row = out + static_cast<int64_t>(y) * out_w * d.out_c;
    for (int x = 0; x < out_w; ++x) {
        float* acc = out_row + static_cast<int64_t>(x) * d.out_c;
        for (int o = 0; o < d.out_c; ++o) acc[o] = bias[o];
        const float* win = in + static_cast<int64_t>(y) * d.stride * in_row +
                           static_cast<int64_t>(x) * d.stride * d.in_c;
        const float* w = weights;
        for (int dy = 0; dy < d.kh; ++dy) {
            const float* in_px = win + static_cast<int64_t>(dy) * in_row;
            for (int dx = 0; dx < d.kw; ++dx) {
                for (int i = 0; i < d.in_c; ++i) {
                    const float v = in_px[dx * d.in_c + i];
                    for (int o = 0; o < d.out_c; ++o) acc[o] += v * w[o];
                    w += d.out_c;
                }
            }
        }
        if (relu) {
            for (int o = 0; o < d.out_c; ++o) acc[o] = acc[o] > 0.0f ? acc[o] : 0.0f;
        }
    }
}

}  // namespace

void conv2d_forward_serial(const float* in, const float* weights, const float* bias,
                           float* out, const Conv2dDims& d, bool relu) {
    const int out_h = d.out_h();
    for (int y = 0; y < out_h; ++y) forward_row(in, weights, bias, out, d, relu, y);
}

void conv2d_forward_omp(const float* in, const float* weights, const float* bias,
                        float* out, const Conv2dDims& d, bool relu) {
    const int out_h = d.out_h();
#pragma omp parallel for schedule(static)
    for (int y = 0; y < out_h; ++y) forward_row(in, weights, bias, out, d, relu, y);
}

void conv2d_forward(const float* in, const float* weights, const float* bias,
                    float* out, const Conv2dDims& d, bool relu) {
    // Per-row work in multiply-accumulates; below this the fork costs more
    // than the loop.
    const int64_t row_work = static_cast<int64_t>(d.out_w()) * d.kh * d.kw * d.in_c * d.out_c;
    if (d.out_h() > 1 && row_work * d.out_h() >= 1'000'000) {
        conv2d_forward_omp(in, weights, bias, out, d, relu);
    } else {
        conv2d_forward_serial(in, weights, bias, out, d, relu);
    }
}

void conv2d_backward(const float* in, const float* weights, const float* d_pre,
                     float* d_weights, float* d_bias, float* d_in, const Conv2dDims& d) {
    const int out_h = d.out_h(), out_w = d.out_w();
    const int in_row = d.in_w * d.in_c;
    if (d_in) {
        std::memset(d_in, 0, static_cast<size_t>(d.in_h) * in_row * sizeof(float));
    }
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const float* g = d_pre + (static_cast<int64_t>(y) * out_w + x) * d.out_c;
            for (int o = 0; o < d.out_c; ++o) d_bias[o] += g[o];
            const int64_t win_off = static_cast<int64_t>(y) * d.stride * in_row +
                                    static_cast<int64_t>(x) * d.stride * d.in_c;
            const float* win = in + win_off;
            float* din_win = d_in ? d_in + win_off : nullptr;
            float* dw = d_weights;
            const float* w = weights;
            for (int dy = 0; dy < d.kh; ++dy) {
                for (int dx = 0; dx < d.kw; ++dx) {
                    const int64_t px = static_cast<int64_t>(dy) * in_row + dx * d.in_c;
                    for (int i = 0; i < d.in_c; ++i) {
                        const float v = win[px + i];
                        float din_acc = 0.0f;
                        for (int o = 0; o < d.out_c; ++o) {
                            dw[o] += v * g[o];
                            din_acc += w[o] * g[o];
                        }
                        if (din_win) din_win[px + i] += din_acc;
                        dw += d.out_c;
                        w += d.out_c;
                    }
                }
            }
        }
    }
}

}  // namespace bsc::kernels
