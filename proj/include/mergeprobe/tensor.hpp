#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

namespace mergeprobe {

/// Dense row-major f32 tensor. All checkpoint weights are stored in this form;
/// f16 inputs are upcast at load time.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

    static Tensor zeros(std::vector<std::int64_t> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.assign(t.numel(), 0.0f);
        return t;
    }

    static Tensor from(std::vector<std::int64_t> shape, std::vector<float> data) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::move(data);
        return t;
    }
};

// Elementwise float equality (so +0.0 == -0.0); use bitwise_equal for the
// stricter determinism checks.
inline bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

/// Row-major f32 matrix used for datasets, logits, and representations.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
    float* row(std::size_t r) { return data.data() + r * cols; }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

}  // namespace mergeprobe
