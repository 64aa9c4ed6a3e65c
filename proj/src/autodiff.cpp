#include "phantom/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "phantom/kernels.hpp"

namespace phantom {

namespace {

// Right-aligned broadcast strides for `s` against output shape `out`
// (stride 0 on broadcast axes). Strides are in elements of the flat buffer.
std::vector<std::size_t> bc_strides(const Shape& s, const Shape& out) {
    const int r = int(out.size());
    const int off = r - int(s.size());
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (int i = int(s.size()) - 1; i >= 0; --i) {
        st[i + off] = (s[i] == 1) ? 0 : acc;
        acc *= std::size_t(s[i]);
    }
    return st;
}

struct BcPlan {
    Shape oshape;
    std::size_t n;
    std::vector<std::size_t> sa, sb;
    bool same;

    BcPlan(const Shape& a, const Shape& b) {
        oshape = broadcast_shape(a, b);
        n = shape_numel(oshape);
        sa = bc_strides(a, oshape);
        sb = bc_strides(b, oshape);
        same = (a == b);
    }

    template <class F>
    void for_each(F f) const {
        if (same) {
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        }
        const int r = int(oshape.size());
        std::vector<int> idx(r, 0);
        for (std::size_t o = 0; o < n; ++o) {
            std::size_t ia = 0, ib = 0;
            for (int d = 0; d < r; ++d) {
                ia += std::size_t(idx[d]) * sa[d];
                ib += std::size_t(idx[d]) * sb[d];
            }
            f(o, ia, ib);
            for (int d = r - 1; d >= 0; --d) {
                if (++idx[d] < oshape[d]) break;
                idx[d] = 0;
            }
        }
    }
};

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& mid,
                std::size_t& inner) {
    if (axis < 0 || axis >= int(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
    outer = mid = inner = 1;
    for (int i = 0; i < axis; ++i) outer *= std::size_t(s[i]);
    mid = std::size_t(s[axis]);
    for (int i = axis + 1; i < int(s.size()); ++i) inner *= std::size_t(s[i]);
}

Shape drop_axis(const Shape& s, int axis) {
    Shape o;
    for (int i = 0; i < int(s.size()); ++i)
        if (i != axis) o.push_back(s[i]);
    if (o.empty()) o.push_back(1);
    return o;
}

} // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (int i = 0; i < r; ++i) {
        const int da = i < r - int(a.size()) ? 1 : a[i - (r - int(a.size()))];
        const int db = i < r - int(b.size()) ? 1 : b[i - (r - int(b.size()))];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// fast: optional whole-array kernel when shapes match exactly.
// fwd(a,b) -> out value; bwd(a,b,g,&ga,&gb) adds partials.
template <class Fwd, class Bwd>
static Tensor binary_impl(Tape* tape, Tensor a, Tensor b, Fwd fwd, Bwd bwd,
                          void (*fast)(const real*, const real*, real*, std::size_t)) {
    BcPlan plan(a.shape(), b.shape());
    Tensor out = Tensor::zeros(plan.oshape);
    if (plan.same && fast) {
        fast(a.data(), b.data(), out.data(), plan.n);
    } else {
        const real* pa = a.data();
        const real* pb = b.data();
        real* po = out.data();
        plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
            po[o] = fwd(pa[ia], pb[ib]);
        });
    }
    if (wants_grad(a) || wants_grad(b)) {
        out.set_requires_grad(true);
        const bool ga = wants_grad(a), gb = wants_grad(b);
        tape->record([a, b, out, plan, bwd, ga, gb]() mutable {
            const real* pa = a.data();
            const real* pb = b.data();
            const real* g = out.grad();
            real* da = ga ? a.grad() : nullptr;
            real* db = gb ? b.grad() : nullptr;
            plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
                real pga = 0, pgb = 0;
                bwd(pa[ia], pb[ib], g[o], &pga, &pgb);
                if (da) da[ia] += pga;
                if (db) db[ib] += pgb;
            });
        });
    }
    return out;
}

#define PH_RECORD_UNARY(tape, x, out, body)         \
    if (wants_grad(x)) {                            \
        out.set_requires_grad(true);                \
        Tensor xc = x, oc = out;                    \
        (tape)->record([xc, oc]() mutable body);    \
    }

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x + y; },
        [](real, real, real g, real* da, real* db) {
            *da = g;
            *db = g;
        },
        kern::ops().add);
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x - y; },
        [](real, real, real g, real* da, real* db) {
            *da = g;
            *db = -g;
        },
        kern::ops().sub);
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x * y; },
        [](real x, real y, real g, real* da, real* db) {
            *da = y * g;
            *db = x * g;
        },
        kern::ops().mul);
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x / y; },
        [](real x, real y, real g, real* da, real* db) {
            *da = g / y;
            *db = -x / (y * y) * g;
        },
        kern::ops().div);
}

Tensor Tape::minimum(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x <= y ? x : y; },
        [](real x, real y, real g, real* da, real* db) {
            if (x <= y)
                *da = g;
            else
                *db = g;
        },
        nullptr);
}

Tensor Tape::maximum(const Tensor& a, const Tensor& b) {
    return binary_impl(
        this, a, b, [](real x, real y) { return x >= y ? x : y; },
        [](real x, real y, real g, real* da, real* db) {
            if (x >= y)
                *da = g;
            else
                *db = g;
        },
        nullptr);
}

Tensor Tape::sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    kern::ops().sigmoid(x.data(), out.data(), x.numel());
    PH_RECORD_UNARY(this, x, out, {
        const real* s = oc.data();
        const real* g = oc.grad();
        real* dx = xc.grad();
        for (std::size_t i = 0; i < oc.numel(); ++i) dx[i] += s[i] * (1 - s[i]) * g[i];
    });
    return out;
}

Tensor Tape::leaky_relu(const Tensor& x, real slope) {
    Tensor out = Tensor::zeros(x.shape());
    kern::ops().leaky_relu(x.data(), slope, out.data(), x.numel());
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        record([xc, oc, slope]() mutable {
            const real* xv = xc.data();
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t i = 0; i < xc.numel(); ++i)
                dx[i] += (xv[i] >= 0 ? real(1) : slope) * g[i];
        });
    }
    return out;
}

Tensor Tape::clamp_min(const Tensor& x, real lo) {
    Tensor out = Tensor::zeros(x.shape());
    const real* xv = x.data();
    real* ov = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = std::max(xv[i], lo);
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        record([xc, oc, lo]() mutable {
            const real* xv = xc.data();
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t i = 0; i < xc.numel(); ++i)
                if (xv[i] > lo) dx[i] += g[i];
        });
    }
    return out;
}

Tensor Tape::clamp(const Tensor& x, real lo, real hi) {
    Tensor out = Tensor::zeros(x.shape());
    const real* xv = x.data();
    real* ov = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = std::clamp(xv[i], lo, hi);
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        record([xc, oc, lo, hi]() mutable {
            const real* xv = xc.data();
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t i = 0; i < xc.numel(); ++i)
                if (xv[i] > lo && xv[i] < hi) dx[i] += g[i];
        });
    }
    return out;
}

Tensor Tape::conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw ShapeError("conv2d expects 4-d input and kernel, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    const int n = input.shape()[0], c = input.shape()[1];
    const int h = input.shape()[2], w = input.shape()[3];
    const int f = kernel.shape()[0], kc = kernel.shape()[1];
    const int kh = kernel.shape()[2], kw = kernel.shape()[3];
    if (kc != c)
        throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
    if (stride < 1 || padding < 0) throw ValueError("conv2d: bad stride/padding");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel larger than padded input");

    const std::size_t ckk = std::size_t(c) * kh * kw;
    const std::size_t ohw = std::size_t(oh) * ow;
    Tensor out = Tensor::zeros({n, f, oh, ow});
    std::vector<real> cols(ckk * ohw);
    for (int b = 0; b < n; ++b) {
        kern::im2col(input.data() + std::size_t(b) * c * h * w, c, h, w, kh, kw, stride,
                     padding, cols.data());
        kern::ops().gemm_nn(kernel.data(), cols.data(),
                            out.data() + std::size_t(b) * f * ohw, f, int(ohw), int(ckk));
    }

    if (wants_grad(input) || wants_grad(kernel)) {
        out.set_requires_grad(true);
        Tensor in = input, k = kernel, oc = out;
        const bool gi = wants_grad(input), gk = wants_grad(kernel);
        record([in, k, oc, stride, padding, gi, gk, n, c, h, w, f, kh, kw, oh, ow, ckk,
                ohw]() mutable {
            std::vector<real> cols(ckk * ohw);
            std::vector<real> dcols(ckk * ohw);
            for (int b = 0; b < n; ++b) {
                const real* gout = oc.grad() + std::size_t(b) * f * ohw;
                if (gk) {
                    kern::im2col(in.data() + std::size_t(b) * c * h * w, c, h, w, kh, kw,
                                 stride, padding, cols.data());
                    // dK[f,ckk] += gout[f,ohw] * cols[ckk,ohw]^T
                    kern::ops().gemm_nt(gout, cols.data(), k.grad(), f, int(ckk), int(ohw));
                }
                if (gi) {
                    std::fill(dcols.begin(), dcols.end(), real(0));
                    // dcols[ckk,ohw] += K[f,ckk]^T * gout[f,ohw]
                    kern::ops().gemm_tn(k.data(), gout, dcols.data(), int(ckk), int(ohw), f);
                    kern::col2im(dcols.data(), c, h, w, kh, kw, stride, padding,
                                 in.grad() + std::size_t(b) * c * h * w);
                }
            }
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    Tensor out = Tensor::scalar(kern::ops().reduce_sum(x.data(), x.numel()));
    PH_RECORD_UNARY(this, x, out, {
        kern::ops().axpy(oc.grad()[0], Tensor::full(xc.shape(), 1).data(), xc.grad(),
                         xc.numel());
    });
    return out;
}

Tensor Tape::mean(const Tensor& x) {
    const real n = real(x.numel());
    Tensor out = Tensor::scalar(kern::ops().reduce_sum(x.data(), x.numel()) / n);
    PH_RECORD_UNARY(this, x, out, {
        const real g = oc.grad()[0] / real(xc.numel());
        real* dx = xc.grad();
        for (std::size_t i = 0; i < xc.numel(); ++i) dx[i] += g;
    });
    return out;
}

Tensor Tape::sum_axis(const Tensor& x, int axis) {
    std::size_t outer, mid, inner;
    axis_split(x.shape(), axis, outer, mid, inner);
    Tensor out = Tensor::zeros(drop_axis(x.shape(), axis));
    const real* xv = x.data();
    real* ov = out.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m)
            for (std::size_t i = 0; i < inner; ++i)
                ov[o * inner + i] += xv[(o * mid + m) * inner + i];
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        record([xc, oc, outer, mid, inner]() mutable {
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t m = 0; m < mid; ++m)
                    for (std::size_t i = 0; i < inner; ++i)
                        dx[(o * mid + m) * inner + i] += g[o * inner + i];
        });
    }
    return out;
}

Tensor Tape::mean_axis(const Tensor& x, int axis) {
    std::size_t outer, mid, inner;
    axis_split(x.shape(), axis, outer, mid, inner);
    Tensor s = sum_axis(x, axis);
    return mul(s, Tensor::scalar(real(1) / real(mid)));
}

Tensor Tape::max_over_axis(const Tensor& x, int axis) {
    std::size_t outer, mid, inner;
    axis_split(x.shape(), axis, outer, mid, inner);
    Tensor out = Tensor::zeros(drop_axis(x.shape(), axis));
    auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
    const real* xv = x.data();
    real* ov = out.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t best = (o * mid) * inner + i;
            for (std::size_t m = 1; m < mid; ++m) {
                const std::size_t at = (o * mid + m) * inner + i;
                if (xv[at] > xv[best]) best = at;
            }
            ov[o * inner + i] = xv[best];
            (*argmax)[o * inner + i] = best;
        }
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        record([xc, oc, argmax]() mutable {
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += g[i];
        });
    }
    return out;
}

Tensor Tape::take(const Tensor& x, std::vector<int64_t> idx, Shape out_shape) {
    if (shape_numel(out_shape) != idx.size())
        throw ShapeError("take: index count " + std::to_string(idx.size()) +
                         " does not match output shape " + shape_str(out_shape));
    Tensor out = Tensor::zeros(std::move(out_shape));
    const real* xv = x.data();
    real* ov = out.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || std::size_t(idx[i]) >= x.numel())
            throw ShapeError("take: index out of range");
        ov[i] = xv[idx[i]];
    }
    if (wants_grad(x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        auto map = std::make_shared<std::vector<int64_t>>(std::move(idx));
        record([xc, oc, map]() mutable {
            const real* g = oc.grad();
            real* dx = xc.grad();
            for (std::size_t i = 0; i < map->size(); ++i) dx[(*map)[i]] += g[i];
        });
    }
    return out;
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         ": element count mismatch");
    Tensor out(std::move(shape), x.vec());
    PH_RECORD_UNARY(this, x, out, {
        kern::ops().axpy(1, oc.grad(), xc.grad(), xc.numel());
    });
    return out;
}

Tensor Tape::concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat0 of zero tensors");
    Shape tail = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (Shape(s.begin() + 1, s.end()) != Shape(tail.begin() + 1, tail.end()))
            throw ShapeError("concat0: trailing shape mismatch " + shape_str(tail) +
                             " vs " + shape_str(s));
        total += s[0];
    }
    Shape oshape = tail;
    oshape[0] = total;
    Tensor out = Tensor::zeros(oshape);
    std::size_t off = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        std::memcpy(out.data() + off, p.data(), p.numel() * sizeof(real));
        off += p.numel();
        any_grad = any_grad || wants_grad(p);
    }
    if (any_grad) {
        out.set_requires_grad(true);
        auto ps = std::make_shared<std::vector<Tensor>>(parts);
        Tensor oc = out;
        record([ps, oc]() mutable {
            std::size_t off = 0;
            for (Tensor& p : *ps) {
                if (p.requires_grad())
                    kern::ops().axpy(1, oc.grad() + off, p.grad(), p.numel());
                off += p.numel();
            }
        });
    }
    return out;
}

Tensor Tape::bce_with_logits(const Tensor& logits, const Tensor& targets,
                             const Tensor& weights) {
    if (targets.shape() != logits.shape() || weights.shape() != logits.shape())
        throw ShapeError("bce_with_logits: shape mismatch " + shape_str(logits.shape()) +
                         " / " + shape_str(targets.shape()) + " / " +
                         shape_str(weights.shape()));
    const real* z = logits.data();
    const real* t = targets.data();
    const real* w = weights.data();
    real acc = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i)
        acc += w[i] * (std::max(z[i], real(0)) - z[i] * t[i] +
                       std::log1p(std::exp(-std::abs(z[i]))));
    Tensor out = Tensor::scalar(acc);
    if (wants_grad(logits)) {
        out.set_requires_grad(true);
        Tensor zc = logits, tc = targets, wc = weights, oc = out;
        record([zc, tc, wc, oc]() mutable {
            const real g = oc.grad()[0];
            const real* z = zc.data();
            const real* t = tc.data();
            const real* w = wc.data();
            real* dz = zc.grad();
            for (std::size_t i = 0; i < zc.numel(); ++i) {
                const real s = real(1) / (real(1) + std::exp(-z[i]));
                dz[i] += g * w[i] * (s - t[i]);
            }
        });
    }
    return out;
}

void Tape::backward(Tensor loss) {
    if (consumed_) throw TapeError("tape already consumed by a previous backward()");
    if (nodes_.empty()) throw TapeError("backward() on an empty tape");
    if (loss.numel() != 1)
        throw TapeError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] = 1;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    consumed_ = true;
}

} // namespace phantom
