#include "cwm/metrics.hpp"

#include <stdexcept>

namespace cwm {

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& truth) {
    if (prediction.height != truth.height || prediction.width != truth.width)
        throw std::invalid_argument("confusion: prediction/truth size mismatch");
    for (int64_t i = 0; i < truth.pixels(); ++i) {
        const int32_t gt = truth.ids[static_cast<size_t>(i)];
        if (gt == LabelMap::kIgnore) continue;
        const int32_t pr = prediction.ids[static_cast<size_t>(i)];
        if (gt < 0 || gt >= num_classes)
            throw std::invalid_argument("confusion: ground-truth label " + std::to_string(gt) +
                                        " out of range");
        if (pr < 0 || pr >= num_classes)
            throw std::invalid_argument("confusion: predicted label " + std::to_string(pr) +
                                        " out of range");
        ++at(gt, pr);
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes) throw std::invalid_argument("confusion: class count mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
    int64_t n = 0;
    for (int64_t c : counts) n += c;
    return n;
}

double miou(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("miou: no pixels accumulated");
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < cm.num_classes; ++c) {
        int64_t tp = cm.at(c, c);
        int64_t fp = 0, fn = 0;
        for (int o = 0; o < cm.num_classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const int64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // class absent from both; leave out of the mean
        sum += static_cast<double>(tp) / static_cast<double>(denom);
        ++present;
    }
    return sum / static_cast<double>(present);
}

LabelMap argmax_labels(const Tensor<float>& logits) {
    if (logits.ndim() != 4 || logits.dim(0) != 1)
        throw std::invalid_argument("argmax_labels: logits must be [1,C,H,W]");
    const int classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const int64_t plane = static_cast<int64_t>(h) * w;
    LabelMap out(h, w);
    for (int64_t px = 0; px < plane; ++px) {
        int best = 0;
        float best_v = logits[px];
        for (int c = 1; c < classes; ++c) {
            const float v = logits[c * plane + px];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.ids[static_cast<size_t>(px)] = best;
    }
    return out;
}

namespace {

double eval_at_k(const Network<float>& net, const Dataset& data, const std::vector<int>& indices,
                 int k) {
    if (k < 1) throw std::invalid_argument("abt: k must be >= 1");
    ConfusionMatrix cm(net.spec.num_classes);
    StreamSession<float> session(net);
    for (int idx : indices) {
        SequenceSample s = data.load_sequence(idx);
        if (s.annotated_index < k)
            throw std::invalid_argument("abt: sequence " + std::to_string(idx) + " has only " +
                                        std::to_string(s.annotated_index) +
                                        " frames before the annotated one, need k = " + std::to_string(k));
        session.reset();
        Tensor<float> logits;
        for (int t = s.annotated_index - k; t < s.annotated_index; ++t)
            logits = session.forward(with_batch_dim(s.frames[static_cast<size_t>(t)]));
        cm.add(argmax_labels(logits), s.labels[static_cast<size_t>(s.annotated_index)]);
    }
    return miou(cm);
}

}  // namespace

double abt_eval_indices(const Network<float>& net, const Dataset& data,
                        const std::vector<int>& indices, const AbtConfig& cfg) {
    if (cfg.k < 1) throw std::invalid_argument("abt: k must be >= 1");
    if (cfg.average_pair && cfg.k < 2)
        throw std::invalid_argument("abt: averaging over k and k-1 needs k >= 2");
    const double a = eval_at_k(net, data, indices, cfg.k);
    if (!cfg.average_pair) return a;
    const double b = eval_at_k(net, data, indices, cfg.k - 1);
    return 0.5 * (a + b);
}

double abt_eval(const Network<float>& net, const Dataset& data, const AbtConfig& cfg) {
    return abt_eval_indices(net, data, data.val_indices(), cfg);
}

std::vector<std::pair<int, double>> abt_sweep(const Network<float>& net, const Dataset& data,
                                              int k_min, int k_max) {
    if (k_min < 1 || k_max < k_min) throw std::invalid_argument("abt_sweep: bad k range");
    std::vector<std::pair<int, double>> out;
    const std::vector<int> idx = data.val_indices();
    for (int k = k_min; k <= k_max; ++k) out.emplace_back(k, eval_at_k(net, data, idx, k));
    return out;
}

}  // namespace cwm
