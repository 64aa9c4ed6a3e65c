#pragma once

#include <cstdint>

namespace phantom {

// Repo-wide floating point precision, fixed at build time
// (-DPHANTOM_PRECISION=single selects float).
#ifdef PHANTOM_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

inline constexpr bool kSinglePrecision = sizeof(real) == 4;

} // namespace phantom
