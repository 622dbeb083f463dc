#pragma once

#include <cstdint>

namespace fedmobi {

// IEEE 754 binary16 codec. Encoding rounds to nearest, ties to even, in a
// single rounding step from the 64-bit value (no float intermediate, so no
// double rounding). Values beyond the half range become +/-inf; NaN payloads
// collapse to a canonical quiet NaN.
std::uint16_t float16_encode(double v);
double float16_decode(std::uint16_t h);

// Round-trip through binary16: the value the far side of the wire sees.
double float16_quantize(double v);

}  // namespace fedmobi
