#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwm/tensor.hpp"

namespace cwm {

// Per-pixel class ids for one frame. 255 marks pixels excluded from the
// loss and from evaluation.
struct LabelMap {
    static constexpr int32_t kIgnore = 255;

    int height = 0;
    int width = 0;
    std::vector<int32_t> ids;

    LabelMap() = default;
    LabelMap(int h, int w) : height(h), width(w), ids(static_cast<size_t>(h) * w, 0) {}

    int64_t pixels() const { return static_cast<int64_t>(height) * width; }
    int32_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
    int32_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }

    bool operator==(const LabelMap& o) const {
        return height == o.height && width == o.width && ids == o.ids;
    }
};

// Labels travel in CWMT files as fp32 [H,W] tensors holding integral
// values (the container has no integer dtype). Small ids are exact in
// fp32, so the round trip is lossless.
inline Tensor<float> label_to_tensor(const LabelMap& m) {
    Tensor<float> t({m.height, m.width});
    for (int64_t i = 0; i < m.pixels(); ++i) t[i] = static_cast<float>(m.ids[static_cast<size_t>(i)]);
    return t;
}

inline LabelMap label_from_tensor(const Tensor<float>& t) {
    if (t.ndim() != 2) throw std::invalid_argument("label: expected 2-d tensor, got " + shape_str(t.shape()));
    LabelMap m(t.dim(0), t.dim(1));
    for (int64_t i = 0; i < t.size(); ++i) {
        float v = t[i];
        auto id = static_cast<int32_t>(v);
        if (static_cast<float>(id) != v || id < 0)
            throw std::runtime_error("label: non-integral value " + std::to_string(v));
        m.ids[static_cast<size_t>(i)] = id;
    }
    return m;
}

}  // namespace cwm
