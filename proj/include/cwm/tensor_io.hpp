#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwm/tensor.hpp"

namespace cwm {

// CWMT container: magic "CWMT", u8 version=1, u8 dtype (0=fp32, 1=fp64),
// u8 ndim, u8 reserved=0, ndim x u32 little-endian dims, then raw
// little-endian element data. Round trips are bit-exact.

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr Dtype value = Dtype::f32;
};
template <>
struct dtype_of<double> {
    static constexpr Dtype value = Dtype::f64;
};

namespace detail {

inline void write_u32le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32le(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("cwmt: truncated header in " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "IEEE-754 sizes expected");

}  // namespace detail

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cwmt: cannot open " + path + " for writing");
    const char magic[4] = {'C', 'W', 'M', 'T'};
    os.write(magic, 4);
    unsigned char head[4] = {1, static_cast<unsigned char>(dtype_of<T>::value),
                             static_cast<unsigned char>(t.ndim()), 0};
    os.write(reinterpret_cast<const char*>(head), 4);
    for (int d : t.shape()) detail::write_u32le(os, static_cast<uint32_t>(d));
    // element payload is written as host memory; little-endian IEEE hosts only
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(T))));
    if (!os) throw std::runtime_error("cwmt: write failed for " + path);
}

inline Dtype peek_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cwmt: cannot open " + path);
    char magic[4];
    unsigned char head[4];
    if (!is.read(magic, 4) || !is.read(reinterpret_cast<char*>(head), 4))
        throw std::runtime_error("cwmt: truncated header in " + path);
    if (std::memcmp(magic, "CWMT", 4) != 0) throw std::runtime_error("cwmt: bad magic in " + path);
    if (head[1] > 1) throw std::runtime_error("cwmt: unknown dtype in " + path);
    return static_cast<Dtype>(head[1]);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cwmt: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CWMT", 4) != 0)
        throw std::runtime_error("cwmt: bad magic in " + path);
    unsigned char head[4];
    if (!is.read(reinterpret_cast<char*>(head), 4))
        throw std::runtime_error("cwmt: truncated header in " + path);
    if (head[0] != 1) throw std::runtime_error("cwmt: unsupported version in " + path);
    if (static_cast<Dtype>(head[1]) != dtype_of<T>::value)
        throw std::runtime_error("cwmt: dtype mismatch in " + path);
    if (head[3] != 0) throw std::runtime_error("cwmt: bad reserved byte in " + path);
    int ndim = head[2];
    std::vector<int> shape(static_cast<size_t>(ndim));
    for (int i = 0; i < ndim; ++i)
        shape[static_cast<size_t>(i)] = static_cast<int>(detail::read_u32le(is, path));
    int64_t n = numel(shape);
    std::vector<T> data(static_cast<size_t>(n));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(T)))))
        throw std::runtime_error("cwmt: truncated payload in " + path);
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace cwm
