#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cwm/label.hpp"
#include "cwm/net.hpp"
#include "cwm/synth.hpp"

namespace cwm {

// Class-by-class prediction counts, accumulated over frames. Ignore
// pixels never enter the matrix.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> counts;  // row = ground truth, col = prediction

    explicit ConfusionMatrix(int num_classes_)
        : num_classes(num_classes_),
          counts(static_cast<size_t>(num_classes_) * num_classes_, 0) {}

    int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * num_classes + pred]; }
    int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * num_classes + pred]; }

    void add(const LabelMap& prediction, const LabelMap& truth);
    void merge(const ConfusionMatrix& other);
    int64_t total() const;
};

// Mean over classes of TP / (TP + FP + FN); classes that never occur in
// either prediction or truth are left out of the mean.
double miou(const ConfusionMatrix& cm);

// Per-pixel argmax over the class axis of [1,C,H,W] logits; ties go to
// the lower class id.
LabelMap argmax_labels(const Tensor<float>& logits);

// Steady-state evaluation: stream the k frames before the annotated one,
// then score the prediction for the annotated frame. Masked models
// alternate between two behaviors, so the paired mode averages the mIoU
// at k and k-1.
struct AbtConfig {
    int k = 19;
    bool average_pair = true;
};

double abt_eval(const Network<float>& net, const Dataset& data, const AbtConfig& cfg);
double abt_eval_indices(const Network<float>& net, const Dataset& data,
                        const std::vector<int>& indices, const AbtConfig& cfg);

// One unpaired evaluation per k in [k_min, k_max].
std::vector<std::pair<int, double>> abt_sweep(const Network<float>& net, const Dataset& data,
                                              int k_min, int k_max);

}  // namespace cwm
