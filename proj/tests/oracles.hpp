#pragma once

// Reference implementations used only by tests. They deliberately avoid
// the library's code paths for the quantity they check.

#include <cmath>
#include <cstdint>
#include <vector>

#include "motionbev/geometry.hpp"

namespace motionbev::oracle {

/// Bin by scanning every bin and testing the half-open edge inequality
/// width*b <= offset < width*(b+1). Offsets at or past the last edge but
/// not above the range land in the last bin.
inline int scan_bin(double value, double lo, double hi, int count) {
  if (!(value >= lo) || value > hi) return -1;
  const double offset = value - lo;
  const double width = (hi - lo) / count;
  for (int b = 0; b < count; ++b)
    if (width * b <= offset && offset < width * (b + 1)) return b;
  return count - 1;
}

/// Cell id (v * w + u) or -1, straight from the polar definitions.
inline std::int32_t cell_of(double x, double y, const GridConfig& cfg) {
  const double rho = std::sqrt(x * x + y * y);
  const double theta = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x);
  const int u = scan_bin(rho, cfg.rho_min, cfg.rho_max, cfg.w);
  const int v = scan_bin(theta, cfg.theta_min, cfg.theta_max, cfg.h);
  if (u < 0 || v < 0) return -1;
  return v * cfg.w + u;
}

}  // namespace motionbev::oracle
