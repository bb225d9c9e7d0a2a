#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace somcpc {

/// Shape of a dense tensor; batch, channel, time ordering for 1D data.
struct TensorShape {
    std::vector<std::int64_t> dims;

    TensorShape() = default;
    TensorShape(std::initializer_list<std::int64_t> d) : dims(d) { validate(); }
    explicit TensorShape(std::vector<std::int64_t> d) : dims(std::move(d)) { validate(); }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    std::size_t rank() const { return dims.size(); }
    std::int64_t operator[](std::size_t i) const { return dims[i]; }
    bool operator==(const TensorShape& o) const { return dims == o.dims; }

    std::string str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i)
            s += (i ? "," : "") + std::to_string(dims[i]);
        return s + "]";
    }

    void validate() const {
        if (dims.size() > 4) throw std::invalid_argument("tensor rank > 4: " + str());
        for (auto d : dims)
            if (d <= 0) throw std::invalid_argument("non-positive tensor dim: " + str());
    }
};

/// Dense row-major float64 tensor.
struct Tensor {
    TensorShape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(TensorShape s) : shape(std::move(s)), v(static_cast<std::size_t>(shape.numel()), 0.0) {}
    Tensor(TensorShape s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<std::int64_t>(v.size()) != shape.numel())
            throw std::invalid_argument("tensor data size does not match shape " + shape.str());
    }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    std::int64_t numel() const { return shape.numel(); }

    double& at(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }
};

}  // namespace somcpc
