#pragma once

// Scalar type and ABI tag for the library. The default build uses 32-bit
// floats. A second build of the same sources with LAYOUTRET_REAL=double is
// used by the gradient checks; the inline namespace keeps both builds
// linkable into one binary.
#ifndef LAYOUTRET_REAL
#define LAYOUTRET_REAL float
#endif

#ifndef LAYOUTRET_ABI
#define LAYOUTRET_ABI f32
#endif

namespace layoutret::inline LAYOUTRET_ABI {

using real = LAYOUTRET_REAL;

}  // namespace layoutret::inline LAYOUTRET_ABI
