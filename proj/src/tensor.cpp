#include "milc/tensor.hpp"

#include <sstream>

namespace milc {

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<size_t> shp, std::vector<double> vals)
    : shape(std::move(shp)), values(std::move(vals)) {
    for (size_t d : shape)
        if (d == 0) throw DimError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_product(shape) != values.size())
        throw DimError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
}

Tensor Tensor::zeros(std::vector<size_t> shape) {
    size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vec(std::vector<double> v) {
    size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(size_t r, size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
}

size_t Tensor::rows() const {
    if (rank() != 2) throw DimError("rows() on tensor of shape " + shape_str(shape));
    return shape[0];
}

size_t Tensor::cols() const {
    if (rank() != 2) throw DimError("cols() on tensor of shape " + shape_str(shape));
    return shape[1];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad = on;
    if (on)
        grad.assign(values.size(), 0.0);
    else
        grad.clear();
}

void Tensor::zero_grad() {
    if (requires_grad) grad.assign(values.size(), 0.0);
}

bool Tensor::finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace milc
