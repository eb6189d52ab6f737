#pragma once

#include "ssop/common.hpp"

namespace ssop::fft {

// Strided batch of length-n transforms, in place. sign = -1 forward, +1 backward.
// Unnormalized in both directions.
void transform(cd* data, int n, int howmany, int stride, int dist, int sign);

// Transforms along the column index: row i of the result is the DFT of row i of x.
// forward: X_k = sum_j x_j e^{-2 pi i jk/N}; inverse carries the 1/N factor.
CMat forward(const CMat& x);
CMat inverse(const CMat& xh);

CVec forward(const CVec& x);
CVec inverse(const CVec& xh);

}  // namespace ssop::fft
