#include "phantom/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace phantom::kern {
namespace {

Backend g_backend = []() {
#if defined(__x86_64__) || defined(_M_X64)
    Backend b = (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
                    ? Backend::Avx2
                    : Backend::Scalar;
#else
    Backend b = Backend::Scalar;
#endif
    if (const char* env = std::getenv("PHANTOM_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
#if defined(__x86_64__) || defined(_M_X64)
        if (std::strcmp(env, "avx2") == 0) b = Backend::Avx2;
#endif
    }
    return b;
}();

} // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops& ops() {
#if defined(__x86_64__) || defined(_M_X64)
    if (g_backend == Backend::Avx2) return avx2_ops();
#endif
    return scalar_ops();
}

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
#if !defined(__x86_64__) && !defined(_M_X64)
    b = Backend::Scalar;
#endif
    g_backend = b;
}

std::string backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

} // namespace phantom::kern
