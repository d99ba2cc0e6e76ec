#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "milc/errors.hpp"

namespace milc {

std::string shape_str(const std::vector<size_t>& shape);

/// Dense row-major tensor of doubles. Rank 1 or 2 everywhere in this
/// codebase; scalars are represented as shape {1}.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // sized like values iff requires_grad

    Tensor() = default;
    Tensor(std::vector<size_t> shp, std::vector<double> vals);

    static Tensor zeros(std::vector<size_t> shape);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> v);
    static Tensor matrix(size_t r, size_t c, std::vector<double> v);

    size_t size() const { return values.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const;
    size_t cols() const;

    double& operator()(size_t i, size_t j) { return values[i * cols() + j]; }
    double operator()(size_t i, size_t j) const { return values[i * cols() + j]; }
    double& operator[](size_t i) { return values[i]; }
    double operator[](size_t i) const { return values[i]; }

    void set_requires_grad(bool on);
    void zero_grad();
    bool finite() const;
    void check_finite(const char* what) const;  // throws NumericError

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline size_t shape_product(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

}  // namespace milc
