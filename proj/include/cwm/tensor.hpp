#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cwm {

inline int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major N-d array. Activations are NCHW, conv kernels OIHW.
// Data is always contiguous; there are no stride tricks. Tensors are
// values: operations never mutate their inputs.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel(shape_)), T{});
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel(shape_) != static_cast<int64_t>(data_.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape_) +
                                        " does not match buffer of " + std::to_string(data_.size()) +
                                        " elements");
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-d accessors for NCHW / OIHW tensors; hot loops use raw pointers.
    int64_t index4(int n, int c, int y, int x) const {
        return ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }
    T& at4(int n, int c, int y, int x) { return data_[static_cast<size_t>(index4(n, c, y, x))]; }
    const T& at4(int n, int c, int y, int x) const {
        return data_[static_cast<size_t>(index4(n, c, y, x))];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Bitwise equality; the exact-reuse guarantees in the streaming layer
    // are asserted with this, not with a tolerance.
    bool bit_equal(const Tensor& o) const {
        return shape_ == o.shape_ && data_ == o.data_;
    }

    std::vector<T>& buffer() { return data_; }
    const std::vector<T>& buffer() const { return data_; }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
    return out;
}

}  // namespace cwm
