#include "phantom/kernels.hpp"

#include <cmath>

namespace phantom::kern {
namespace {

void s_add(const real* a, const real* b, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}
void s_sub(const real* a, const real* b, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] - b[i];
}
void s_mul(const real* a, const real* b, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}
void s_div(const real* a, const real* b, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] / b[i];
}
void s_axpy(real alpha, const real* x, real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void s_scal(real alpha, real* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}
real s_dot(const real* a, const real* b, std::size_t n) {
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
real s_reduce_sum(const real* x, std::size_t n) {
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
void s_sigmoid(const real* x, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = real(1) / (real(1) + std::exp(-x[i]));
}
void s_leaky_relu(const real* x, real slope, real* o, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] >= 0 ? x[i] : slope * x[i];
}

void s_gemm_nn(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        real* ci = c + std::size_t(i) * n;
        for (int p = 0; p < k; ++p) {
            const real aip = a[std::size_t(i) * k + p];
            if (aip == 0) continue;
            const real* bp = b + std::size_t(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}
void s_gemm_nt(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const real* ai = a + std::size_t(i) * k;
        for (int j = 0; j < n; ++j) {
            const real* bj = b + std::size_t(j) * k;
            real acc = 0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[std::size_t(i) * n + j] += acc;
        }
    }
}
void s_gemm_tn(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int p = 0; p < k; ++p) {
        const real* bp = b + std::size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const real api = a[std::size_t(p) * m + i];
            if (api == 0) continue;
            real* ci = c + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

} // namespace

const Ops& scalar_ops() {
    static const Ops t = {
        s_add,  s_sub,        s_mul,     s_div,        s_axpy,
        s_scal, s_dot,        s_reduce_sum, s_sigmoid, s_leaky_relu,
        s_gemm_nn, s_gemm_nt, s_gemm_tn,
    };
    return t;
}

void im2col(const real* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, real* cols) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::size_t r = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                real* row = cols + r * std::size_t(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        const bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
                        row[std::size_t(oy) * ow + ox] =
                            in ? img[(std::size_t(ch) * h + iy) * w + ix] : real(0);
                    }
                }
            }
        }
    }
}

void col2im(const real* cols, int c, int h, int w, int kh, int kw, int stride,
            int pad, real* img) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::size_t r = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const real* row = cols + r * std::size_t(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        img[(std::size_t(ch) * h + iy) * w + ix] +=
                            row[std::size_t(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace phantom::kern
