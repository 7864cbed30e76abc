#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <type_traits>

#include "cwm/label.hpp"
#include "cwm/mask.hpp"
#include "cwm/tensor.hpp"

namespace cwm {

// Direct 2-d convolution and the handful of other kernels the networks
// are built from. Forward passes accumulate per output element in
// (c, ky, kx) order; the masked variant slices kernel rows and runs the
// same routine, so a masked channel is bit-identical to the matching
// channel of the full convolution.

namespace detail {

inline int floor_div(int a, int b) {  // b > 0
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}
inline int ceil_div(int a, int b) {  // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline void check_conv_args(const std::vector<int>& in_shape, const std::vector<int>& k_shape,
                            int stride, int padding) {
    if (in_shape.size() != 4) throw std::invalid_argument("conv2d: input must be NCHW, got " + shape_str(in_shape));
    if (k_shape.size() != 4) throw std::invalid_argument("conv2d: kernel must be OIHW, got " + shape_str(k_shape));
    if (in_shape[1] != k_shape[1])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(in_shape[1]) +
                                    " != kernel channels " + std::to_string(k_shape[1]));
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
}

inline int conv_out_dim(int in, int k, int stride, int padding, const char* axis) {
    int span = in + 2 * padding - k;
    if (span < 0)
        throw std::invalid_argument(std::string("conv2d: kernel larger than padded input along ") + axis);
    if (span % stride != 0)
        throw std::invalid_argument(std::string("conv2d: non-integral output size along ") + axis);
    return span / stride + 1;
}

}  // namespace detail

template <typename T>
void conv2d_into(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<std::type_identity_t<T>>* bias,
                 int stride, int padding, Tensor<T>& out) {
    detail::check_conv_args(input.shape(), kernel.shape(), stride, padding);
    const int n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int ho = detail::conv_out_dim(h, kh, stride, padding, "height");
    const int wo = detail::conv_out_dim(w, kw, stride, padding, "width");
    if (bias && (bias->ndim() != 1 || bias->dim(0) != c_out))
        throw std::invalid_argument("conv2d: bias must be [Cout]");

    const std::vector<int> out_shape{n_batch, c_out, ho, wo};
    if (out.shape() != out_shape) out = Tensor<T>(out_shape);

    const T* in_base = input.data();
    const T* k_base = kernel.data();
    T* out_base = out.data();
    const int64_t in_plane = static_cast<int64_t>(h) * w;
    const int64_t out_plane = static_cast<int64_t>(ho) * wo;

    for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < c_out; ++o) {
            T* plane = out_base + (static_cast<int64_t>(n) * c_out + o) * out_plane;
            const T init = bias ? (*bias)[o] : T{};
            std::fill(plane, plane + out_plane, init);
            for (int c = 0; c < c_in; ++c) {
                const T* in_ch = in_base + (static_cast<int64_t>(n) * c_in + c) * in_plane;
                const T* k_row = k_base + (static_cast<int64_t>(o) * c_in + c) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int y0 = std::max(0, detail::ceil_div(padding - ky, stride));
                    const int y1 = std::min(ho - 1, detail::floor_div(h - 1 + padding - ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wgt = k_row[ky * kw + kx];
                        const int x0 = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int x1 = std::min(wo - 1, detail::floor_div(w - 1 + padding - kx, stride));
                        const int off = kx - padding;
                        for (int y = y0; y <= y1; ++y) {
                            const int iy = y * stride - padding + ky;
                            const T* in_row = in_ch + static_cast<int64_t>(iy) * w;
                            T* out_row = plane + static_cast<int64_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = x0; x <= x1; ++x) out_row[x] += wgt * in_row[x + off];
                            } else {
                                for (int x = x0; x <= x1; ++x) out_row[x] += wgt * in_row[2 * x + off];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<std::type_identity_t<T>>* bias,
                 int stride, int padding) {
    Tensor<T> out;
    conv2d_into(input, kernel, bias, stride, padding, out);
    return out;
}

// Contiguous copy of kernel rows [start, end); masked convolutions
// materialize this slice before computing.
template <typename T>
Tensor<T> slice_kernel_rows(const Tensor<T>& kernel, int start, int end) {
    const int c_in = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const int64_t row = static_cast<int64_t>(c_in) * kh * kw;
    Tensor<T> out({end - start, c_in, kh, kw});
    std::copy(kernel.data() + start * row, kernel.data() + end * row, out.data());
    return out;
}

template <typename T>
Tensor<T> slice_bias(const Tensor<T>& bias, int start, int end) {
    Tensor<T> out({end - start});
    std::copy(bias.data() + start, bias.data() + end, out.data());
    return out;
}

// Convolution restricted to the mask's output channels. Equals the same
// rows of the full convolution exactly.
template <typename T>
Tensor<T> conv2d_masked(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<std::type_identity_t<T>>* bias,
                        const ChannelMask& mask, int stride, int padding) {
    if (mask.total != kernel.dim(0))
        throw std::invalid_argument("conv2d_masked: mask over " + std::to_string(mask.total) +
                                    " channels but kernel has " + std::to_string(kernel.dim(0)));
    Tensor<T> k_slice = slice_kernel_rows(kernel, mask.start, mask.end);
    Tensor<T> b_slice;
    if (bias) b_slice = slice_bias(*bias, mask.start, mask.end);
    return conv2d(input, k_slice, bias ? &b_slice : nullptr, stride, padding);
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernel;
    Tensor<T> bias;
};

// Exact adjoints of conv2d for zero padding.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& kernel, int stride, int padding) {
    detail::check_conv_args(input.shape(), kernel.shape(), stride, padding);
    const int n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int ho = detail::conv_out_dim(h, kh, stride, padding, "height");
    const int wo = detail::conv_out_dim(w, kw, stride, padding, "width");
    const std::vector<int> want{n_batch, c_out, ho, wo};
    if (grad_out.shape() != want)
        throw std::invalid_argument("conv2d_backward: grad_out " + shape_str(grad_out.shape()) +
                                    ", expected " + shape_str(want));

    ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()), Tensor<T>({c_out})};
    const int64_t in_plane = static_cast<int64_t>(h) * w;
    const int64_t out_plane = static_cast<int64_t>(ho) * wo;
    const T* go_base = grad_out.data();
    const T* in_base = input.data();
    const T* k_base = kernel.data();

    for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < c_out; ++o) {
            const T* go = go_base + (static_cast<int64_t>(n) * c_out + o) * out_plane;
            T acc = T{};
            for (int64_t i = 0; i < out_plane; ++i) acc += go[i];
            g.bias[o] += acc;
        }
    }

    for (int o = 0; o < c_out; ++o) {
        for (int c = 0; c < c_in; ++c) {
            T* gk_row = g.kernel.data() + (static_cast<int64_t>(o) * c_in + c) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int y0 = std::max(0, detail::ceil_div(padding - ky, stride));
                const int y1 = std::min(ho - 1, detail::floor_div(h - 1 + padding - ky, stride));
                for (int kx = 0; kx < kw; ++kx) {
                    const int x0 = std::max(0, detail::ceil_div(padding - kx, stride));
                    const int x1 = std::min(wo - 1, detail::floor_div(w - 1 + padding - kx, stride));
                    const int off = kx - padding;
                    T acc = T{};
                    for (int n = 0; n < n_batch; ++n) {
                        const T* go = go_base + (static_cast<int64_t>(n) * c_out + o) * out_plane;
                        const T* in_ch = in_base + (static_cast<int64_t>(n) * c_in + c) * in_plane;
                        for (int y = y0; y <= y1; ++y) {
                            const int iy = y * stride - padding + ky;
                            const T* in_row = in_ch + static_cast<int64_t>(iy) * w;
                            const T* go_row = go + static_cast<int64_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = x0; x <= x1; ++x) acc += go_row[x] * in_row[x + off];
                            } else {
                                for (int x = x0; x <= x1; ++x) acc += go_row[x] * in_row[2 * x + off];
                            }
                        }
                    }
                    gk_row[ky * kw + kx] = acc;
                }
            }
        }
    }

    for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < c_out; ++o) {
            const T* go = go_base + (static_cast<int64_t>(n) * c_out + o) * out_plane;
            for (int c = 0; c < c_in; ++c) {
                T* gi_ch = g.input.data() + (static_cast<int64_t>(n) * c_in + c) * in_plane;
                const T* k_row = k_base + (static_cast<int64_t>(o) * c_in + c) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int y0 = std::max(0, detail::ceil_div(padding - ky, stride));
                    const int y1 = std::min(ho - 1, detail::floor_div(h - 1 + padding - ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wgt = k_row[ky * kw + kx];
                        const int x0 = std::max(0, detail::ceil_div(padding - kx, stride));
                        const int x1 = std::min(wo - 1, detail::floor_div(w - 1 + padding - kx, stride));
                        const int off = kx - padding;
                        for (int y = y0; y <= y1; ++y) {
                            const int iy = y * stride - padding + ky;
                            T* gi_row = gi_ch + static_cast<int64_t>(iy) * w;
                            const T* go_row = go + static_cast<int64_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = x0; x <= x1; ++x) gi_row[x + off] += wgt * go_row[x];
                            } else {
                                for (int x = x0; x <= x1; ++x) gi_row[2 * x + off] += wgt * go_row[x];
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* p = x.data();
    T* q = out.data();
    for (int64_t i = 0; i < x.size(); ++i) q[i] = p[i] > T{} ? p[i] : T{};
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
    if (!grad_out.same_shape(input)) throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor<T> out(input.shape());
    const T* g = grad_out.data();
    const T* p = input.data();
    T* q = out.data();
    for (int64_t i = 0; i < input.size(); ++i) q[i] = p[i] > T{} ? g[i] : T{};
    return out;
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("maxpool2x2: input must be NCHW");
    const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " + shape_str(x.shape()));
    Tensor<T> out({n_batch, c, h / 2, w / 2});
    for (int n = 0; n < n_batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx) {
                    T m = x.at4(n, ch, 2 * y, 2 * xx);
                    m = std::max(m, x.at4(n, ch, 2 * y, 2 * xx + 1));
                    m = std::max(m, x.at4(n, ch, 2 * y + 1, 2 * xx));
                    m = std::max(m, x.at4(n, ch, 2 * y + 1, 2 * xx + 1));
                    out.at4(n, ch, y, xx) = m;
                }
    return out;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
    const int n_batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::vector<int> want{n_batch, c, h / 2, w / 2};
    if (grad_out.shape() != want) throw std::invalid_argument("maxpool2x2_backward: shape mismatch");
    Tensor<T> g(input.shape());
    for (int n = 0; n < n_batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx) {
                    // grad routes to the first maximum in scan order
                    int by = 2 * y, bx = 2 * xx;
                    T m = input.at4(n, ch, by, bx);
                    const int ys[3] = {2 * y, 2 * y + 1, 2 * y + 1};
                    const int xs[3] = {2 * xx + 1, 2 * xx, 2 * xx + 1};
                    for (int i = 0; i < 3; ++i) {
                        T v = input.at4(n, ch, ys[i], xs[i]);
                        if (v > m) {
                            m = v;
                            by = ys[i];
                            bx = xs[i];
                        }
                    }
                    g.at4(n, ch, by, bx) += grad_out.at4(n, ch, y, xx);
                }
    return g;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2x: input must be NCHW");
    const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out({n_batch, c, 2 * h, 2 * w});
    for (int n = 0; n < n_batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y) {
                const T* in_row = x.data() + x.index4(n, ch, y / 2, 0);
                T* out_row = out.data() + out.index4(n, ch, y, 0);
                for (int xx = 0; xx < 2 * w; ++xx) out_row[xx] = in_row[xx / 2];
            }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& grad_out) {
    if (grad_out.ndim() != 4) throw std::invalid_argument("upsample backward: grad must be NCHW");
    const int n_batch = grad_out.dim(0), c = grad_out.dim(1);
    const int h2 = grad_out.dim(2), w2 = grad_out.dim(3);
    if (h2 % 2 != 0 || w2 % 2 != 0) throw std::invalid_argument("upsample backward: odd spatial dims");
    Tensor<T> g({n_batch, c, h2 / 2, w2 / 2});
    for (int n = 0; n < n_batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h2; ++y)
                for (int xx = 0; xx < w2; ++xx)
                    g.at4(n, ch, y / 2, xx / 2) += grad_out.at4(n, ch, y, xx);
    return g;
}

template <typename T>
struct CeLossResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
};

// Pixelwise softmax cross-entropy against a label map, averaged over the
// non-ignored pixels. Per-pixel softmax is evaluated in double.
template <typename T>
CeLossResult<T> softmax_ce_loss(const Tensor<T>& logits, const LabelMap& labels) {
    if (logits.ndim() != 4 || logits.dim(0) != 1)
        throw std::invalid_argument("softmax_ce_loss: logits must be [1,C,H,W]");
    const int classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (labels.height != h || labels.width != w)
        throw std::invalid_argument("softmax_ce_loss: label size mismatch");

    CeLossResult<T> r;
    r.grad_logits = Tensor<T>(logits.shape());
    const int64_t plane = static_cast<int64_t>(h) * w;

    int64_t counted = 0;
    for (int64_t i = 0; i < plane; ++i)
        if (labels.ids[static_cast<size_t>(i)] != LabelMap::kIgnore) ++counted;
    if (counted == 0) throw std::invalid_argument("softmax_ce_loss: every pixel is ignored");

    std::vector<double> probs(static_cast<size_t>(classes));
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int64_t px = static_cast<int64_t>(y) * w + x;
            const int32_t lab = labels.ids[static_cast<size_t>(px)];
            if (lab == LabelMap::kIgnore) continue;
            if (lab < 0 || lab >= classes)
                throw std::invalid_argument("softmax_ce_loss: label " + std::to_string(lab) +
                                            " out of range for " + std::to_string(classes) + " classes");
            double mx = -1e300;
            for (int c = 0; c < classes; ++c)
                mx = std::max(mx, static_cast<double>(logits[c * plane + px]));
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) {
                probs[static_cast<size_t>(c)] = std::exp(static_cast<double>(logits[c * plane + px]) - mx);
                denom += probs[static_cast<size_t>(c)];
            }
            total += -(std::log(probs[static_cast<size_t>(lab)] / denom));
            for (int c = 0; c < classes; ++c) {
                double p = probs[static_cast<size_t>(c)] / denom;
                double grad = (p - (c == lab ? 1.0 : 0.0)) / static_cast<double>(counted);
                r.grad_logits[c * plane + px] = static_cast<T>(grad);
            }
        }
    }
    r.loss = total / static_cast<double>(counted);
    return r;
}

}  // namespace cwm
