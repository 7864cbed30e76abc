#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwm/cwm_conv.hpp"
#include "cwm/mask.hpp"
#include "cwm/ops.hpp"
#include "cwm/rng.hpp"
#include "cwm/tensor.hpp"

namespace cwm {

enum class LayerKind { Conv, Relu, MaxPool, Upsample, ResidualAdd };

std::string kind_name(LayerKind k);
LayerKind kind_from_name(const std::string& s);

// One node of the layer graph. The graph is a sequential list; `input`
// names the producing layer (empty means the previous layer, the frame
// for the first). ResidualAdd takes a second operand via `skip_input`.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    std::string input;
    std::string skip_input;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    bool cwm_eligible = false;
};

// Serializable network description. Weights are kept separately so one
// spec can describe many parameter sets.
struct NetworkSpec {
    std::string name = "toynet";
    int in_channels = 3;
    int num_classes = 0;
    int base_width = 0;
    double alpha = 1.0;
    double rho = 0.0;
    std::vector<LayerSpec> layers;

    void validate() const;

    // Main input index per layer (-1 = frame) and skip index per layer
    // (-2 = none). Throws on dangling names or forward references.
    std::vector<int> resolve_inputs() const;
    std::vector<int> resolve_skips() const;

    std::vector<const LayerSpec*> conv_layers() const;
};

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);
void save_spec(const NetworkSpec& spec, const std::string& path);
NetworkSpec load_spec(const std::string& path);

struct ToynetOptions {
    bool cwm_stem = false;  // ablation switches: stream the stem / the
    bool cwm_skip = false;  // skip projection like any block conv
};

// The fixed reference architecture: stem conv, two residual blocks at w,
// maxpool, two residual blocks at 2w (projection on the first skip),
// nearest 2x upsample, fusion conv, 1x1 classifier head. Every conv is
// streamed except stem, head and the skip projection.
NetworkSpec toynet_spec(int num_classes, int base_width, double alpha, double rho,
                        const ToynetOptions& opts = {});

// Uniform width scaling: every conv's channel counts are multiplied by
// alpha and rounded to nearest (floor 1, ties away from zero). The frame
// channels and the classifier output are preserved.
NetworkSpec slim(const NetworkSpec& spec, double alpha);

template <typename T>
struct ConvParams {
    Tensor<T> kernel;
    Tensor<T> bias;
};

// A spec plus its weights and per-layer mask schedules.
template <typename T>
struct Network {
    NetworkSpec spec;
    std::map<std::string, ConvParams<T>> params;
    std::map<std::string, MaskSchedule> schedules;  // eligible convs only
    std::vector<int> input_idx;                     // resolved topology
    std::vector<int> skip_idx;
};

// He-style normal init (std = sqrt(2 / fan_in)), zero bias. The conv
// feeding each residual junction is damped so the un-normalized blocks
// start near identity and activations do not compound with depth. One
// PRNG stream seeded by `seed`, layers drawn in list order, so equal
// seeds give bit-identical weights.
template <typename T>
Network<T> build_network(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Network<T> net;
    net.spec = spec;
    net.input_idx = spec.resolve_inputs();
    net.skip_idx = spec.resolve_skips();

    std::vector<bool> feeds_residual(spec.layers.size(), false);
    for (size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::ResidualAdd && net.input_idx[i] >= 0)
            feeds_residual[static_cast<size_t>(net.input_idx[i])] = true;

    SplitMix64 rng(seed);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind != LayerKind::Conv) continue;
        Tensor<T> kernel({l.out_channels, l.in_channels, l.kernel, l.kernel});
        const double gain = feeds_residual[i] ? 0.25 : 1.0;
        const double stddev =
            gain * std::sqrt(2.0 / (static_cast<double>(l.in_channels) * l.kernel * l.kernel));
        for (int64_t i2 = 0; i2 < kernel.size(); ++i2)
            kernel[i2] = static_cast<T>(stddev * rng.next_normal());
        net.params.emplace(l.name, ConvParams<T>{std::move(kernel), Tensor<T>({l.out_channels})});
        if (l.cwm_eligible) {
            if (l.out_channels < 2)
                throw std::invalid_argument("build_network: streamed conv '" + l.name +
                                            "' needs at least 2 output channels");
            net.schedules.emplace(l.name, bistep_generator(l.out_channels, spec.rho));
        }
    }
    return net;
}

inline Network<float> build_toynet(int num_classes, int base_width, double alpha, double rho,
                                   uint64_t seed, const ToynetOptions& opts = {}) {
    return build_network<float>(toynet_spec(num_classes, base_width, alpha, rho, opts), seed);
}

// Runs the graph with plain convolutions everywhere; no state involved.
template <typename T>
Tensor<T> stateless_forward(const Network<T>& net, const Tensor<T>& frame) {
    std::vector<Tensor<T>> outs(net.spec.layers.size());
    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        const LayerSpec& l = net.spec.layers[i];
        const Tensor<T>& in = net.input_idx[i] < 0 ? frame : outs[static_cast<size_t>(net.input_idx[i])];
        switch (l.kind) {
            case LayerKind::Conv: {
                const ConvParams<T>& p = net.params.at(l.name);
                outs[i] = conv2d(in, p.kernel, &p.bias, l.stride, l.padding);
                break;
            }
            case LayerKind::Relu:
                outs[i] = relu(in);
                break;
            case LayerKind::MaxPool:
                outs[i] = maxpool2x2(in);
                break;
            case LayerKind::Upsample:
                outs[i] = upsample_nearest2x(in);
                break;
            case LayerKind::ResidualAdd:
                outs[i] = in + outs[static_cast<size_t>(net.skip_idx[i])];
                break;
        }
    }
    return outs.back();
}

// Per-layer activations recorded for one step, enough to run backward.
template <typename T>
struct Tape {
    Tensor<T> frame;
    std::vector<Tensor<T>> outputs;
    int64_t step = 0;
};

// Streams frames through the network, threading one CwmState per
// streamed conv. All layer states advance in lockstep with the session
// step. Single-threaded; run one session per thread over shared weights.
template <typename T>
class StreamSession {
public:
    explicit StreamSession(const Network<T>& net)
        : net_(&net), states_(net.spec.layers.size()) {}

    int64_t step() const { return step_; }
    const Network<T>& network() const { return *net_; }

    void reset() {
        for (CwmState<T>& s : states_) s = CwmState<T>{};
        step_ = 0;
    }

    Tensor<T> forward(const Tensor<T>& frame) { return run(frame, nullptr); }

    // Forward that records every activation; used for the training step
    // on the final frame of a sequence.
    Tensor<T> forward_taped(const Tensor<T>& frame, Tape<T>& tape) {
        tape.frame = frame;
        tape.step = step_;
        Tensor<T> out = run(frame, &tape.outputs);
        return out;
    }

private:
    Tensor<T> run(const Tensor<T>& frame, std::vector<Tensor<T>>* record) {
        const NetworkSpec& spec = net_->spec;
        if (frame.ndim() != 4 || frame.dim(0) != 1 || frame.dim(1) != spec.in_channels)
            throw std::invalid_argument("session: frame must be [1," +
                                        std::to_string(spec.in_channels) + ",H,W], got " +
                                        shape_str(frame.shape()));
        std::vector<Tensor<T>> outs(spec.layers.size());
        for (size_t i = 0; i < spec.layers.size(); ++i) {
            const LayerSpec& l = spec.layers[i];
            const Tensor<T>& in =
                net_->input_idx[i] < 0 ? frame : outs[static_cast<size_t>(net_->input_idx[i])];
            switch (l.kind) {
                case LayerKind::Conv: {
                    const ConvParams<T>& p = net_->params.at(l.name);
                    if (l.cwm_eligible) {
                        CwmState<T>& st = states_[i];
                        if (st.step != step_)
                            throw std::logic_error("session: layer state out of lockstep");
                        CwmForwardResult<T> r = cwm_forward(p.kernel, &p.bias, l.stride, l.padding,
                                                            net_->schedules.at(l.name), st, in);
                        outs[i] = std::move(r.output);
                        st = std::move(r.state);
                    } else {
                        outs[i] = conv2d(in, p.kernel, &p.bias, l.stride, l.padding);
                    }
                    break;
                }
                case LayerKind::Relu:
                    outs[i] = relu(in);
                    break;
                case LayerKind::MaxPool:
                    outs[i] = maxpool2x2(in);
                    break;
                case LayerKind::Upsample:
                    outs[i] = upsample_nearest2x(in);
                    break;
                case LayerKind::ResidualAdd:
                    outs[i] = in + outs[static_cast<size_t>(net_->skip_idx[i])];
                    break;
            }
        }
        ++step_;
        Tensor<T> out = outs.back();
        if (record) *record = std::move(outs);
        return out;
    }

    const Network<T>* net_;
    std::vector<CwmState<T>> states_;
    int64_t step_ = 0;
};

template <typename T>
struct ParamGrads {
    std::map<std::string, ConvParams<T>> grads;
};

namespace detail {
template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g) {
    if (acc.empty()) {
        acc = g;
        return;
    }
    if (!acc.same_shape(g)) throw std::logic_error("backward: gradient shape mismatch");
    T* a = acc.data();
    const T* b = g.data();
    for (int64_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}
}  // namespace detail

// Backward through the taped step. Streamed convs follow the cwm rule:
// only the rows of that step's mask receive gradient; other layers get
// their exact adjoints.
template <typename T>
ParamGrads<T> backward(const Network<T>& net, const Tape<T>& tape, const Tensor<T>& grad_logits) {
    const NetworkSpec& spec = net.spec;
    if (tape.outputs.size() != spec.layers.size())
        throw std::invalid_argument("backward: tape does not match network");
    ParamGrads<T> pg;
    std::vector<Tensor<T>> out_grads(spec.layers.size());
    out_grads.back() = grad_logits;

    for (size_t ii = spec.layers.size(); ii-- > 0;) {
        if (out_grads[ii].empty()) continue;  // output unused downstream
        const LayerSpec& l = spec.layers[ii];
        const Tensor<T>& go = out_grads[ii];
        const Tensor<T>& in =
            net.input_idx[ii] < 0 ? tape.frame : tape.outputs[static_cast<size_t>(net.input_idx[ii])];
        Tensor<T> gi;
        switch (l.kind) {
            case LayerKind::Conv: {
                const ConvParams<T>& p = net.params.at(l.name);
                if (l.cwm_eligible) {
                    CwmGrads<T> g = cwm_backward(p.kernel, l.stride, l.padding,
                                                 net.schedules.at(l.name), in, tape.step, go);
                    gi = std::move(g.input);
                    pg.grads.emplace(l.name, ConvParams<T>{std::move(g.kernel), std::move(g.bias)});
                } else {
                    ConvGrads<T> g = conv2d_backward(go, in, p.kernel, l.stride, l.padding);
                    gi = std::move(g.input);
                    pg.grads.emplace(l.name, ConvParams<T>{std::move(g.kernel), std::move(g.bias)});
                }
                break;
            }
            case LayerKind::Relu:
                gi = relu_backward(go, in);
                break;
            case LayerKind::MaxPool:
                gi = maxpool2x2_backward(go, in);
                break;
            case LayerKind::Upsample:
                gi = upsample_nearest2x_backward(go);
                break;
            case LayerKind::ResidualAdd:
                gi = go;
                detail::add_into(out_grads[static_cast<size_t>(net.skip_idx[ii])], go);
                break;
        }
        if (net.input_idx[ii] >= 0)
            detail::add_into(out_grads[static_cast<size_t>(net.input_idx[ii])], gi);
    }
    return pg;
}

// Weights round-trip: a directory of CWMT tensors plus manifest.json
// embedding the spec. Loads are all-or-nothing.
template <typename T>
void save_weights(const Network<T>& net, const std::string& dir);
template <typename T>
Network<T> load_weights(const std::string& dir, const NetworkSpec* expected = nullptr);

int64_t param_count(const NetworkSpec& spec);

}  // namespace cwm
