#include "fedmobi/float16.hpp"

#include <bit>
#include <cstring>

namespace fedmobi {

std::uint16_t float16_encode(double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  std::uint16_t sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000u);
  std::uint64_t mag = bits & 0x7fffffffffffffffULL;

  if (mag > 0x7ff0000000000000ULL) return static_cast<std::uint16_t>(sign | 0x7e00u);  // nan
  if (mag == 0x7ff0000000000000ULL) return static_cast<std::uint16_t>(sign | 0x7c00u);  // inf
  if (mag == 0) return sign;

  int exp = static_cast<int>(mag >> 52);  // biased double exponent
  std::uint64_t frac = mag & ((1ULL << 52) - 1);
  std::uint64_t sig;
  if (exp == 0) {
    // Subnormal double: far below the half subnormal range; only the rounding
    // path below can produce a nonzero result, and it never does here.
    sig = frac;
    exp = -1022;
  } else {
    sig = (1ULL << 52) | frac;
    exp -= 1023;
  }

  if (exp >= 16) return static_cast<std::uint16_t>(sign | 0x7c00u);  // overflow

  // Keep an 11-bit significand (1 + 10); extra right shift for subnormals.
  int shift = 42;
  bool subnormal = exp < -14;
  if (subnormal) {
    shift += (-14 - exp);
    if (shift >= 64) return sign;  // rounds to zero even with sticky bits
  }
  std::uint64_t kept = sig >> shift;
  std::uint64_t rem = sig & ((shift == 63) ? 0x7fffffffffffffffULL : ((1ULL << shift) - 1));
  std::uint64_t half = 1ULL << (shift - 1);
  if (rem > half || (rem == half && (kept & 1))) ++kept;

  if (subnormal) {
    if (kept >= 1024) return static_cast<std::uint16_t>(sign | (1u << 10));  // rounded up to normal
    return static_cast<std::uint16_t>(sign | kept);
  }
  int e = exp + 15;
  if (kept == 2048) {
    kept = 1024;
    ++e;
    if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  return static_cast<std::uint16_t>(sign | (static_cast<unsigned>(e) << 10) |
                                    static_cast<unsigned>(kept & 0x3ffu));
}

double float16_decode(std::uint16_t h) {
  int sign = (h >> 15) & 1;
  int e = (h >> 10) & 0x1f;
  int m = h & 0x3ff;
  double mag;
  if (e == 31) {
    if (m != 0) return std::bit_cast<double>(0x7ff8000000000000ULL | (std::uint64_t(sign) << 63));
    mag = std::bit_cast<double>(0x7ff0000000000000ULL);
  } else if (e == 0) {
    mag = static_cast<double>(m) * 0x1.0p-24;
  } else {
    mag = static_cast<double>(1024 + m) * 0x1.0p-10;
    // ldexp by e-15
    for (int i = 15; i < e; ++i) mag *= 2.0;
    for (int i = e; i < 15; ++i) mag *= 0.5;
  }
  return sign ? -mag : mag;
}

double float16_quantize(double v) { return float16_decode(float16_encode(v)); }

}  // namespace fedmobi
