#pragma once

#include <utility>

#include "memfield/common.hpp"

namespace memfield::enc {

/// Fixed-point circular CORDIC (rotation mode, 64-bit Q61 internally),
/// emulating the digital core's sinusoid unit. The angle is reduced to the
/// principal range first. |sin - ref| and |cos - ref| <= 2^(2-iterations).
std::pair<double, double> cordic_sincos(double angle_rad, int iterations);

}  // namespace memfield::enc
