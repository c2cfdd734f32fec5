#pragma once

#include "denseface/rng.hpp"
#include "denseface/tensor.hpp"

namespace df {

template <class S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.mutable_values()) v = static_cast<S>(rng.normal() * stddev);
    return t;
}

template <class S>
Tensor<S> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.mutable_values()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

// Kaiming-style init: stddev = sqrt(2 / fan_in)
template <class S>
Tensor<S> kaiming(Shape shape, int64_t fan_in, Rng& rng) {
    return randn<S>(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace df
