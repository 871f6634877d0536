#pragma once

namespace tcq {

// Standard normal CDF, via erfc.
double normal_cdf(double x);

// Standard normal quantile. Wichura's AS241 (PPND16), relative accuracy
// about 1e-16 over (0, 1). Throws ParameterError outside the open interval.
double inverse_normal_cdf(double p);

} // namespace tcq
