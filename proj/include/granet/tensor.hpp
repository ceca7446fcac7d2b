#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "granet/core.hpp"

namespace granet {

/// Dense 4-D tensor. Value-semantic handle over shared storage: copying a
/// Tensor aliases the same data/grad buffers, which is what the recorded
/// graph relies on (operation records capture handles, not copies).
template <typename T>
struct Tensor {
    Shape shape{};
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad; // null unless requires_grad
    bool requires_grad = false;

    Tensor() = default;

    bool defined() const { return static_cast<bool>(data); }
    std::int64_t numel() const { return shape.numel(); }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T* gptr() { return grad->data(); }
    const T* gptr() const { return grad->data(); }

    T& at(int ni, int ci, int hi, int wi) { return (*data)[shape.at(ni, ci, hi, wi)]; }
    const T& at(int ni, int ci, int hi, int wi) const { return (*data)[shape.at(ni, ci, hi, wi)]; }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), T(0));
    }
};

/// Leaf tensor construction (weights, inputs). Tensors produced by graph
/// operations come from Graph methods instead.
template <typename T>
Tensor<T> make_leaf(Shape s, bool requires_grad = false, T fill = T(0)) {
    Tensor<T> t;
    t.shape = s;
    t.data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.numel()), fill);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.numel()), T(0));
    return t;
}

template <typename T>
Tensor<T> make_leaf(Shape s, const std::vector<T>& values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != s.numel())
        throw ShapeError("leaf data length " + std::to_string(values.size()) +
                         " does not match shape " + s.str());
    Tensor<T> t = make_leaf<T>(s, requires_grad);
    std::copy(values.begin(), values.end(), t.data->begin());
    return t;
}

template <typename T>
Tensor<T> make_uniform_leaf(Shape s, T lo, T hi, std::mt19937& rng, bool requires_grad = false) {
    Tensor<T> t = make_leaf<T>(s, requires_grad);
    std::uniform_real_distribution<T> dist(lo, hi);
    for (auto& v : *t.data) v = dist(rng);
    return t;
}

/// Deep copy (fresh buffers).
template <typename T>
Tensor<T> clone(const Tensor<T>& x) {
    Tensor<T> t = make_leaf<T>(x.shape, x.requires_grad);
    std::copy(x.data->begin(), x.data->end(), t.data->begin());
    if (x.grad && t.grad) std::copy(x.grad->begin(), x.grad->end(), t.grad->begin());
    return t;
}

/// Argmax positions recorded by 2x2 max-pooling. Each entry is the flat
/// h*W + w offset of the window maximum inside the pre-pool plane of its
/// (n, c) slice; `shape` matches the pooled output.
struct PoolIndices {
    Shape shape{};
    std::vector<std::int32_t> idx;
};

} // namespace granet
