#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "phantom/config.hpp"
#include "phantom/errors.hpp"

namespace phantom {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major n-d array. Copies share the underlying buffer (cheap,
// value-like handle); data mutation goes through data(). A tensor marked
// requires_grad participates in tape recording; grad buffers live on the
// tensor so tape nodes can accumulate into them by handle.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<real> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, real value);
    static Tensor scalar(real value);

    const Shape& shape() const { return shape_; }
    int rank() const { return int(shape_.size()); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool defined() const { return bool(data_); }

    real* data() { return data_->data(); }
    const real* data() const { return data_->data(); }
    std::vector<real>& vec() { return *data_; }
    const std::vector<real>& vec() const { return *data_; }

    real item() const;
    real at(std::size_t i) const { return (*data_)[i]; }

    bool requires_grad() const { return requires_grad_; }
    // Allocates the grad buffer immediately so every copy of this handle
    // shares it (copies made later see gradients accumulated via the tape).
    Tensor& set_requires_grad(bool v) {
        requires_grad_ = v;
        if (v) ensure_grad();
        return *this;
    }

    bool has_grad() const { return bool(grad_); }
    real* grad() { return grad_->data(); }
    const real* grad() const { return grad_->data(); }
    std::vector<real>& grad_vec() { return *grad_; }
    void ensure_grad();
    void zero_grad();

    // Deep copy of the buffer (grad not copied).
    Tensor clone() const;

    bool all_finite() const;

private:
    Shape shape_;
    std::shared_ptr<std::vector<real>> data_;
    std::shared_ptr<std::vector<real>> grad_;
    bool requires_grad_ = false;
};

} // namespace phantom
