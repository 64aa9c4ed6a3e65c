#include "phantom/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace phantom::kern {
namespace {

#ifdef PHANTOM_SINGLE_PRECISION

constexpr std::size_t VL = 8;
using vreal = __m256;
inline vreal vload(const real* p) { return _mm256_loadu_ps(p); }
inline void vstore(real* p, vreal v) { _mm256_storeu_ps(p, v); }
inline vreal vset1(real x) { return _mm256_set1_ps(x); }
inline vreal vadd(vreal a, vreal b) { return _mm256_add_ps(a, b); }
inline vreal vsub(vreal a, vreal b) { return _mm256_sub_ps(a, b); }
inline vreal vmul(vreal a, vreal b) { return _mm256_mul_ps(a, b); }
inline vreal vdiv(vreal a, vreal b) { return _mm256_div_ps(a, b); }
inline vreal vfma(vreal a, vreal b, vreal c) { return _mm256_fmadd_ps(a, b, c); }

inline real vhsum(vreal v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

// exp() on 8 floats, cephes-style range reduction + degree-5 polynomial.
inline __m256 vexp(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647950f);
    const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);

    x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
    __m256 fx = _mm256_fmadd_ps(x, log2e, half);
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, c1, x);
    x = _mm256_fnmadd_ps(fx, c2, x);

    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, half);
    y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, one));

    __m256i n = _mm256_cvtps_epi32(fx);
    n = _mm256_add_epi32(n, _mm256_set1_epi32(0x7f));
    n = _mm256_slli_epi32(n, 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

inline vreal vsigmoid(vreal x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    return _mm256_div_ps(one, _mm256_add_ps(one, vexp(_mm256_sub_ps(_mm256_setzero_ps(), x))));
}

inline vreal vleaky(vreal x, vreal slope) {
    __m256 neg = _mm256_mul_ps(x, slope);
    __m256 mask = _mm256_cmp_ps(x, _mm256_setzero_ps(), _CMP_GE_OQ);
    return _mm256_blendv_ps(neg, x, mask);
}

#else // double

constexpr std::size_t VL = 4;
using vreal = __m256d;
inline vreal vload(const real* p) { return _mm256_loadu_pd(p); }
inline void vstore(real* p, vreal v) { _mm256_storeu_pd(p, v); }
inline vreal vset1(real x) { return _mm256_set1_pd(x); }
inline vreal vadd(vreal a, vreal b) { return _mm256_add_pd(a, b); }
inline vreal vsub(vreal a, vreal b) { return _mm256_sub_pd(a, b); }
inline vreal vmul(vreal a, vreal b) { return _mm256_mul_pd(a, b); }
inline vreal vdiv(vreal a, vreal b) { return _mm256_div_pd(a, b); }
inline vreal vfma(vreal a, vreal b, vreal c) { return _mm256_fmadd_pd(a, b, c); }

inline real vhsum(vreal v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline vreal vleaky(vreal x, vreal slope) {
    __m256d neg = _mm256_mul_pd(x, slope);
    __m256d mask = _mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GE_OQ);
    return _mm256_blendv_pd(neg, x, mask);
}

#endif

void v_add(const real* a, const real* b, real* o, std::size_t n) {
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vadd(vload(a + i), vload(b + i)));
    for (; i < n; ++i) o[i] = a[i] + b[i];
}
void v_sub(const real* a, const real* b, real* o, std::size_t n) {
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vsub(vload(a + i), vload(b + i)));
    for (; i < n; ++i) o[i] = a[i] - b[i];
}
void v_mul(const real* a, const real* b, real* o, std::size_t n) {
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vmul(vload(a + i), vload(b + i)));
    for (; i < n; ++i) o[i] = a[i] * b[i];
}
void v_div(const real* a, const real* b, real* o, std::size_t n) {
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vdiv(vload(a + i), vload(b + i)));
    for (; i < n; ++i) o[i] = a[i] / b[i];
}
void v_axpy(real alpha, const real* x, real* y, std::size_t n) {
    const vreal va = vset1(alpha);
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(y + i, vfma(va, vload(x + i), vload(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}
void v_scal(real alpha, real* x, std::size_t n) {
    const vreal va = vset1(alpha);
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(x + i, vmul(va, vload(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}
real v_dot(const real* a, const real* b, std::size_t n) {
    vreal acc = vset1(0);
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) acc = vfma(vload(a + i), vload(b + i), acc);
    real s = vhsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}
real v_reduce_sum(const real* x, std::size_t n) {
    vreal acc = vset1(0);
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) acc = vadd(acc, vload(x + i));
    real s = vhsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
void v_sigmoid(const real* x, real* o, std::size_t n) {
#ifdef PHANTOM_SINGLE_PRECISION
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vsigmoid(vload(x + i)));
    for (; i < n; ++i) o[i] = 1.0f / (1.0f + std::exp(-x[i]));
#else
    // no vectorized double exp; reference loop
    for (std::size_t i = 0; i < n; ++i) o[i] = 1.0 / (1.0 + std::exp(-x[i]));
#endif
}
void v_leaky_relu(const real* x, real slope, real* o, std::size_t n) {
    const vreal vs = vset1(slope);
    std::size_t i = 0;
    for (; i + VL <= n; i += VL) vstore(o + i, vleaky(vload(x + i), vs));
    for (; i < n; ++i) o[i] = x[i] >= 0 ? x[i] : slope * x[i];
}

void v_gemm_nn(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        real* ci = c + std::size_t(i) * n;
        for (int p = 0; p < k; ++p) {
            const real aip = a[std::size_t(i) * k + p];
            if (aip == 0) continue;
            const real* bp = b + std::size_t(p) * n;
            const vreal va = vset1(aip);
            int j = 0;
            for (; j + int(VL) <= n; j += int(VL))
                vstore(ci + j, vfma(va, vload(bp + j), vload(ci + j)));
            for (; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}
void v_gemm_nt(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const real* ai = a + std::size_t(i) * k;
        for (int j = 0; j < n; ++j)
            c[std::size_t(i) * n + j] += v_dot(ai, b + std::size_t(j) * k, std::size_t(k));
    }
}
void v_gemm_tn(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int p = 0; p < k; ++p) {
        const real* bp = b + std::size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const real api = a[std::size_t(p) * m + i];
            if (api == 0) continue;
            real* ci = c + std::size_t(i) * n;
            const vreal va = vset1(api);
            int j = 0;
            for (; j + int(VL) <= n; j += int(VL))
                vstore(ci + j, vfma(va, vload(bp + j), vload(ci + j)));
            for (; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

} // namespace

const Ops& avx2_ops() {
    static const Ops t = {
        v_add,  v_sub,        v_mul,        v_div,     v_axpy,
        v_scal, v_dot,        v_reduce_sum, v_sigmoid, v_leaky_relu,
        v_gemm_nn, v_gemm_nt, v_gemm_tn,
    };
    return t;
}

} // namespace phantom::kern

#endif // x86_64
