#pragma once

#include <optional>
#include <stdexcept>
#include <type_traits>
#include <utility>

#include "cwm/mask.hpp"
#include "cwm/ops.hpp"
#include "cwm/tensor.hpp"

namespace cwm {

// Channel-wise masked convolution. Step 0 runs a full convolution to
// initialize the saved output; every later step computes only the
// channels of that step's mask and keeps the cached values for the rest.

// Session-owned streaming state. `cached` holds the previous output and
// is absent exactly when step == 0. Weights are immutable during a
// session, so concurrent sessions can share one layer.
template <typename T>
struct CwmState {
    int64_t step = 0;
    std::optional<Tensor<T>> cached;
};

template <typename T>
struct CwmForwardResult {
    Tensor<T> output;
    CwmState<T> state;
};

// Forward for one time-step. The output becomes the new cache; the old
// cache is never mutated, so forward is a pure function of
// (weights, state, input).
template <typename T>
CwmForwardResult<T> cwm_forward(const Tensor<T>& kernel, const Tensor<std::type_identity_t<T>>* bias, int stride,
                                int padding, const MaskSchedule& schedule,
                                const CwmState<T>& state, const Tensor<T>& input) {
    if (schedule.total != kernel.dim(0))
        throw std::invalid_argument("cwm_forward: schedule over " + std::to_string(schedule.total) +
                                    " channels but kernel has " + std::to_string(kernel.dim(0)));
    if (state.step == 0) {
        if (state.cached) throw std::invalid_argument("cwm_forward: step 0 with a leftover cache");
        Tensor<T> out = conv2d(input, kernel, bias, stride, padding);
        return {out, CwmState<T>{1, out}};
    }
    if (!state.cached) throw std::invalid_argument("cwm_forward: step > 0 without a cached output");

    const ChannelMask& m = mask_for_step(schedule, state.step);
    Tensor<T> partial = conv2d_masked(input, kernel, bias, m, stride, padding);

    const Tensor<T>& cached = *state.cached;
    if (partial.dim(0) != cached.dim(0) || partial.dim(2) != cached.dim(2) ||
        partial.dim(3) != cached.dim(3))
        throw std::invalid_argument("cwm_forward: input size changed mid-session (cache " +
                                    shape_str(cached.shape()) + ", fresh channels " +
                                    shape_str(partial.shape()) + ")");

    // interlace: fresh channels overwrite their slots in a copy of the cache
    Tensor<T> out = cached;
    const int c_out = cached.dim(1);
    const int64_t plane = static_cast<int64_t>(cached.dim(2)) * cached.dim(3);
    for (int n = 0; n < cached.dim(0); ++n) {
        const T* src = partial.data() + static_cast<int64_t>(n) * m.count() * plane;
        T* dst = out.data() + (static_cast<int64_t>(n) * c_out + m.start) * plane;
        std::copy(src, src + static_cast<int64_t>(m.count()) * plane, dst);
    }
    return {out, CwmState<T>{state.step + 1, out}};
}

template <typename T>
struct CwmGrads {
    Tensor<T> input;
    Tensor<T> kernel;
    Tensor<T> bias;
};

// Backward through the final step of a streamed sequence. Cached channels
// are constants (no backpropagation through time into saved outputs), so
// gradients flow only through the channels computed at `final_step`:
// kernel rows outside that step's mask get exactly zero gradient and the
// input gradient comes from the active rows alone. final_step == 0 is the
// full pass and reduces to the plain convolution backward.
template <typename T>
CwmGrads<T> cwm_backward(const Tensor<T>& kernel, int stride, int padding,
                         const MaskSchedule& schedule, const Tensor<T>& final_input,
                         int64_t final_step, const Tensor<T>& grad_out) {
    if (final_step < 0) throw std::invalid_argument("cwm_backward: no steps were taken");
    if (final_step == 0) {
        ConvGrads<T> g = conv2d_backward(grad_out, final_input, kernel, stride, padding);
        return {std::move(g.input), std::move(g.kernel), std::move(g.bias)};
    }

    const ChannelMask& m = mask_for_step(schedule, final_step);
    const int c_out = kernel.dim(0);
    const int ho = grad_out.dim(2), wo = grad_out.dim(3);
    const int64_t plane = static_cast<int64_t>(ho) * wo;

    // slice of grad_out covering the freshly computed channels
    Tensor<T> go_active({grad_out.dim(0), m.count(), ho, wo});
    for (int n = 0; n < grad_out.dim(0); ++n) {
        const T* src = grad_out.data() + (static_cast<int64_t>(n) * c_out + m.start) * plane;
        std::copy(src, src + static_cast<int64_t>(m.count()) * plane,
                  go_active.data() + static_cast<int64_t>(n) * m.count() * plane);
    }

    Tensor<T> k_slice = slice_kernel_rows(kernel, m.start, m.end);
    ConvGrads<T> g = conv2d_backward(go_active, final_input, k_slice, stride, padding);

    CwmGrads<T> out{std::move(g.input), Tensor<T>(kernel.shape()), Tensor<T>({c_out})};
    const int64_t row = static_cast<int64_t>(kernel.dim(1)) * kernel.dim(2) * kernel.dim(3);
    std::copy(g.kernel.data(), g.kernel.data() + static_cast<int64_t>(m.count()) * row,
              out.kernel.data() + m.start * row);
    std::copy(g.bias.data(), g.bias.data() + m.count(), out.bias.data() + m.start);
    return out;
}

// Standalone layer bundle for direct use outside a network graph.
template <typename T>
struct CwmConvLayer {
    Tensor<T> kernel;  // [Cout, Cin, kh, kw]
    std::optional<Tensor<T>> bias;
    int stride = 1;
    int padding = 0;
    MaskSchedule schedule;  // over Cout

    CwmConvLayer(Tensor<T> kernel_, std::optional<Tensor<T>> bias_, int stride_, int padding_,
                 MaskSchedule schedule_)
        : kernel(std::move(kernel_)),
          bias(std::move(bias_)),
          stride(stride_),
          padding(padding_),
          schedule(std::move(schedule_)) {
        if (schedule.total != kernel.dim(0))
            throw std::invalid_argument("cwm layer: schedule over " + std::to_string(schedule.total) +
                                        " channels but kernel has " + std::to_string(kernel.dim(0)));
    }

    int out_channels() const { return kernel.dim(0); }
};

template <typename T>
CwmForwardResult<T> cwm_forward(const CwmConvLayer<T>& layer, const CwmState<T>& state,
                                const Tensor<T>& input) {
    return cwm_forward(layer.kernel, layer.bias ? &*layer.bias : nullptr, layer.stride,
                       layer.padding, layer.schedule, state, input);
}

template <typename T>
CwmGrads<T> cwm_backward(const CwmConvLayer<T>& layer, const Tensor<T>& final_input,
                         int64_t final_step, const Tensor<T>& grad_out) {
    return cwm_backward(layer.kernel, layer.stride, layer.padding, layer.schedule, final_input,
                        final_step, grad_out);
}

// Session boundary: the next forward is a full pass again. Idempotent.
template <typename T>
CwmState<T> reset(const CwmState<T>&) {
    return CwmState<T>{};
}

}  // namespace cwm
