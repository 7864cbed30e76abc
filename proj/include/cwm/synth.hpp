#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cwm/label.hpp"
#include "cwm/tensor.hpp"

namespace cwm {

// Synthetic video sequences of moving shapes over a noisy background,
// with pixel-exact segmentation labels for every frame. Motion is
// integer pixels per frame with wraparound, so a shape's label mask at
// frame t+1 is frame t's mask translated by its velocity.
struct SynthConfig {
    int height = 64;
    int width = 64;
    int num_classes = 5;  // background + up to 4 shape classes
    int min_shapes = 2;
    int max_shapes = 5;
    int max_speed = 3;  // px/frame per axis, constant per object
    double noise = 0.08;  // background noise amplitude around mid-gray
    int frames = 30;
    int annotated_index = 19;  // 0-based: the 20th frame
    int train_sequences = 40;
    int val_sequences = 10;
    uint64_t seed = 1;

    void validate() const;
};

// Canonical fill color of each shape class; background is class 0.
std::array<float, 3> class_color(int class_id);

struct SequenceSample {
    std::vector<Tensor<float>> frames;  // [3,H,W], values in [0,1]
    std::vector<LabelMap> labels;       // one per frame
    int annotated_index = 0;
};

struct Dataset {
    std::string dir;
    SynthConfig cfg;

    int sequences() const { return cfg.train_sequences + cfg.val_sequences; }
    std::vector<int> train_indices() const;
    std::vector<int> val_indices() const;
    SequenceSample load_sequence(int idx) const;
};

// Renders and writes every sequence under dir: seq_%05d/frame_%02d.cwmt,
// seq_%05d/label_%02d.cwmt, plus index.json. Byte-identical for equal
// configs.
Dataset generate_dataset(const SynthConfig& cfg, const std::string& dir);

Dataset open_dataset(const std::string& dir);

// [C,H,W] -> [1,C,H,W]; sessions take batched frames.
template <typename T>
Tensor<T> with_batch_dim(const Tensor<T>& t) {
    std::vector<int> shape{1};
    shape.insert(shape.end(), t.shape().begin(), t.shape().end());
    return Tensor<T>(std::move(shape), t.buffer());
}

}  // namespace cwm
