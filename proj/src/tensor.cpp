#include "phantom/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace phantom {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= std::size_t(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != data.size())
        throw ShapeError("shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data.size()));
    data_ = std::make_shared<std::vector<real>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<real>(n, real(0)));
}

Tensor Tensor::full(Shape shape, real value) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<real>(n, value));
}

Tensor Tensor::scalar(real value) { return Tensor({1}, {value}); }

real Tensor::item() const {
    if (numel() != 1)
        throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
    return (*data_)[0];
}

void Tensor::ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<real>>(numel(), real(0));
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), real(0));
}

Tensor Tensor::clone() const {
    Tensor t(shape_, *data_);
    t.set_requires_grad(requires_grad_);
    return t;
}

bool Tensor::all_finite() const {
    for (real v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace phantom
