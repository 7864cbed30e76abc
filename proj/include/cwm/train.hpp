#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cwm/metrics.hpp"
#include "cwm/net.hpp"
#include "cwm/synth.hpp"

namespace cwm {

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double clip_norm = 0.0;  // global-norm gradient clip; 0 disables
};

// SGD with momentum, decoupled weight decay and an optional global-norm
// gradient clip:
//   g <- g * min(1, clip / ||g||);  v <- momentum * v + g
//   p <- p - lr * v - lr * wd * p
// Decay touches every parameter, including kernel rows that received no
// gradient because they fell outside the final step's mask. The clip
// rescales all gradients by one factor, so zero rows stay exactly zero.
template <typename T>
class SgdOptimizer {
public:
    explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}

    const SgdConfig& config() const { return cfg_; }
    int64_t steps() const { return steps_; }

    void step(Network<T>& net, const ParamGrads<T>& grads) {
        T scale = static_cast<T>(1);
        if (cfg_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& [name, g] : grads.grads) {
                for (int64_t i = 0; i < g.kernel.size(); ++i)
                    sq += static_cast<double>(g.kernel[i]) * g.kernel[i];
                for (int64_t i = 0; i < g.bias.size(); ++i)
                    sq += static_cast<double>(g.bias[i]) * g.bias[i];
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) scale = static_cast<T>(cfg_.clip_norm / norm);
        }
        for (auto& [name, p] : net.params) {
            auto git = grads.grads.find(name);
            if (git == grads.grads.end())
                throw std::invalid_argument("sgd: no gradient for layer '" + name + "'");
            update(p.kernel, git->second.kernel, velocity_[name].kernel, scale);
            update(p.bias, git->second.bias, velocity_[name].bias, scale);
        }
        ++steps_;
    }

private:
    void update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& vel, T scale) {
        if (!param.same_shape(grad)) throw std::invalid_argument("sgd: gradient shape mismatch");
        if (vel.empty()) vel = Tensor<T>(param.shape());
        const T lr = static_cast<T>(cfg_.lr);
        const T mu = static_cast<T>(cfg_.momentum);
        const T wd = static_cast<T>(cfg_.weight_decay);
        T* p = param.data();
        const T* g = grad.data();
        T* v = vel.data();
        for (int64_t i = 0; i < param.size(); ++i) {
            v[i] = mu * v[i] + scale * g[i];
            p[i] = p[i] - lr * v[i] - lr * wd * p[i];
        }
    }

    SgdConfig cfg_;
    std::map<std::string, ConvParams<T>> velocity_;
    int64_t steps_ = 0;
};

struct TrainConfig {
    int j = 7;                     // frames streamed before the predicted one
    int sequences_per_sample = 2;  // consecutive-offset updates per sample
    int epochs = 3;
    SgdConfig sgd;
    uint64_t seed = 1;  // weight init and per-epoch shuffling
    bool eval_each_epoch = false;
    AbtConfig abt;

    void validate() const {
        if (j < 1) throw std::invalid_argument("train: j must be >= 1");
        if (sequences_per_sample < 1 || sequences_per_sample > 4)
            throw std::invalid_argument("train: sequences_per_sample must be in [1,4]");
        if (j < sequences_per_sample)
            throw std::invalid_argument("train: j must be >= sequences_per_sample");
        if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    }
};

// One optimization step from one frame window: stream the frames through
// a fresh session, take the loss of the final prediction against the
// future-frame target, update. Gradients follow the streaming rule: at
// the final step only the active channels of each masked conv (and all
// plain layers) carry gradient.
template <typename T>
double train_sequence_step(Network<T>& net, SgdOptimizer<T>& opt,
                           std::span<const Tensor<T>> frames, const LabelMap& target) {
    if (frames.empty()) throw std::invalid_argument("train: empty frame sequence");
    StreamSession<T> session(net);
    for (size_t i = 0; i + 1 < frames.size(); ++i) session.forward(frames[i]);
    Tape<T> tape;
    Tensor<T> logits = session.forward_taped(frames.back(), tape);
    CeLossResult<T> ce = softmax_ce_loss(logits, target);
    ParamGrads<T> grads = backward(net, tape, ce.grad_logits);
    opt.step(net, grads);
    return ce.loss;
}

// Multi-sequence training: the window is reused with consecutive start
// offsets, one update per sub-sequence, each from a fresh session.
// frames = the window [T-j .. T-1]; sub-sequence s drops the first s
// frames, so the offsets are j, j-1, ..., j-k+1.
template <typename T>
std::vector<double> train_bisequence_step(Network<T>& net, SgdOptimizer<T>& opt,
                                          std::span<const Tensor<T>> frames,
                                          const LabelMap& target, int sequences_per_sample) {
    const int j = static_cast<int>(frames.size());
    if (sequences_per_sample < 1) throw std::invalid_argument("train: sequences_per_sample must be >= 1");
    if (j < sequences_per_sample)
        throw std::invalid_argument("train: window of " + std::to_string(j) +
                                    " frames cannot start at " + std::to_string(sequences_per_sample) +
                                    " consecutive offsets");
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(sequences_per_sample));
    for (int s = 0; s < sequences_per_sample; ++s)
        losses.push_back(train_sequence_step(net, opt, frames.subspan(static_cast<size_t>(s)), target));
    return losses;
}

struct TrainReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_miou;  // empty unless eval_each_epoch
    double wall_seconds = 0.0;
    int64_t optimizer_steps = 0;
    std::string weights_dir;
};

// Full loop over the dataset's training split; deterministic for a fixed
// config. Writes nothing; callers persist weights and reports.
TrainReport train_network(Network<float>& net, const Dataset& data, const TrainConfig& cfg);

void write_train_report_csv(const TrainReport& r, const std::string& path);
void write_train_report_json(const TrainReport& r, const TrainConfig& cfg, const std::string& path);

}  // namespace cwm
