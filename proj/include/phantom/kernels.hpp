#pragma once

#include <cstddef>
#include <string>

#include "phantom/config.hpp"

namespace phantom::kern {

// Flat-array arithmetic kernels. Every entry has a scalar reference
// implementation; on x86-64 with AVX2+FMA a vectorized variant is selected
// at startup. Backends must agree elementwise for the map-style kernels and
// to rounding for the reductions/GEMMs (summation order differs).
struct Ops {
    void (*add)(const real* a, const real* b, real* out, std::size_t n);
    void (*sub)(const real* a, const real* b, real* out, std::size_t n);
    void (*mul)(const real* a, const real* b, real* out, std::size_t n);
    void (*div)(const real* a, const real* b, real* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(real alpha, const real* x, real* y, std::size_t n);
    // x *= alpha
    void (*scal)(real alpha, real* x, std::size_t n);
    real (*dot)(const real* a, const real* b, std::size_t n);
    real (*reduce_sum)(const real* x, std::size_t n);
    void (*sigmoid)(const real* x, real* out, std::size_t n);
    void (*leaky_relu)(const real* x, real slope, real* out, std::size_t n);
    // Row-major GEMMs, accumulating into C.
    // nn: C[M,N] += A[M,K] * B[K,N]
    // nt: C[M,N] += A[M,K] * B[N,K]^T
    // tn: C[M,N] += A[K,M]^T * B[K,N]
    void (*gemm_nn)(const real* a, const real* b, real* c, int m, int n, int k);
    void (*gemm_nt)(const real* a, const real* b, real* c, int m, int n, int k);
    void (*gemm_tn)(const real* a, const real* b, real* c, int m, int n, int k);
};

enum class Backend { Scalar, Avx2 };

// Active kernel table. Selected once: AVX2 when the CPU supports it,
// overridable with PHANTOM_KERNELS=scalar|avx2 or set_backend().
const Ops& ops();
Backend active_backend();
void set_backend(Backend b);
bool avx2_available();
std::string backend_name(Backend b);

const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif

// Layout helpers shared by all conv backends (memory movement only).
// cols has shape [C*kh*kw, oh*ow].
void im2col(const real* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, real* cols);
void col2im(const real* cols, int c, int h, int w, int kh, int kw, int stride,
            int pad, real* img);

} // namespace phantom::kern
