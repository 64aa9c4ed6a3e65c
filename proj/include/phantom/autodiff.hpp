#pragma once

#include <functional>
#include <vector>

#include "phantom/tensor.hpp"

namespace phantom {

// Reverse-mode tape. One tape per computation; confined to a single thread
// for its lifetime. Ops record a backward closure only when some input
// requires a gradient, so running inference through a tape with plain
// tensors records nothing.
//
// backward() consumes the tape: calling it a second time (or on a fresh,
// empty tape) raises TapeError instead of silently double-accumulating.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Elementwise, broadcasting over size-1 axes (shapes aligned right).
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    // Gradient routes to the winning operand; ties go to `a`.
    Tensor minimum(const Tensor& a, const Tensor& b);
    Tensor maximum(const Tensor& a, const Tensor& b);

    Tensor sigmoid(const Tensor& x);
    Tensor leaky_relu(const Tensor& x, real slope);
    Tensor clamp_min(const Tensor& x, real lo);
    // clamp into [lo, hi]; zero gradient outside
    Tensor clamp(const Tensor& x, real lo, real hi);

    // input [N,C,H,W], kernel [F,C,kh,kw]; cross-correlation.
    Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

    Tensor sum(const Tensor& x);
    Tensor mean(const Tensor& x);
    Tensor sum_axis(const Tensor& x, int axis);
    Tensor mean_axis(const Tensor& x, int axis);
    // Reduction keeps the remaining axes; argmax ties break to the lowest
    // flat index and receive the whole gradient.
    Tensor max_over_axis(const Tensor& x, int axis);

    // out[i] = x.flat[idx[i]]; backward scatter-adds. Implements slicing,
    // permutation and gathers in one op.
    Tensor take(const Tensor& x, std::vector<int64_t> idx, Shape out_shape);
    Tensor reshape(const Tensor& x, Shape shape);
    Tensor concat0(const std::vector<Tensor>& parts);

    // Numerically stable binary cross entropy from logits, reduced to a
    // weighted sum:  sum_i w_i * (max(z,0) - z*t + log(1+exp(-|z|))).
    // Gradients flow to logits only.
    Tensor bce_with_logits(const Tensor& logits, const Tensor& targets,
                           const Tensor& weights);

    void backward(Tensor loss);

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Appends a raw backward closure; used by the op implementations.
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// Shared broadcast shape computation (throws ShapeError when incompatible).
Shape broadcast_shape(const Shape& a, const Shape& b);

} // namespace phantom
