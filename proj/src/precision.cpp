#include "fragility/precision.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

namespace fragility {

namespace {

double round_to_generic(FpFormat f, double x, bool flush_subnormals) {
  const int p = mantissa_bits(f);
  const int emin = min_normal_exp(f);

  // Quantum exponent of the destination format at this magnitude. Scaling by
  // 2^-q makes the representable values integers, so nearbyint (ties-to-even
  // in the default rounding mode) performs the format rounding exactly.
  const int e = std::ilogb(x);
  const int q = (e > emin ? e : emin) - p;
  const double y = std::ldexp(std::nearbyint(std::ldexp(x, -q)), q);

  if (std::fabs(y) > max_finite(f)) {
    return std::copysign(HUGE_VAL, x);
  }
  if (flush_subnormals && y != 0.0 && std::fabs(y) < std::ldexp(1.0, emin)) {
    return std::copysign(0.0, x);
  }
  return y;
}

}  // namespace

double round_to(FpFormat f, double x, bool flush_subnormals) {
  if (!std::isfinite(x) || x == 0.0) return x;

  // Fast path: round-to-nearest-even via the carry trick on the double's own
  // bits (single rounding, bit-identical to the scaled-nearbyint route). Only
  // taken when the result stays normal in the target format and one binade
  // clear of overflow, so the mantissa carry can roll into the exponent field
  // without leaving the finite range; everything else uses the generic path.
  const uint64_t u = std::bit_cast<uint64_t>(x);
  const int ef = static_cast<int>((u >> 52) & 0x7FF);  // biased exponent
  const int p = mantissa_bits(f);
  const int emin = min_normal_exp(f);
  const int emax_safe = (f == FpFormat::FP16) ? 14 : 126;
  if (ef - 1023 >= emin && ef - 1023 <= emax_safe) {
    const int s = 52 - p;  // mantissa bits to drop
    const uint64_t half = 1ull << (s - 1);
    const uint64_t r = (u + (half - 1) + ((u >> s) & 1ull)) & ~((1ull << s) - 1ull);
    return std::bit_cast<double>(r);
  }
  return round_to_generic(f, x, flush_subnormals);
}

double round_to_strict(FpFormat f, double x, bool flush_subnormals) {
  const double y = round_to(f, x, flush_subnormals);
  if (std::isfinite(x) && !std::isfinite(y)) {
    throw Error(ErrorCode::Overflow, "round_to: overflow in strict mode");
  }
  return y;
}

double effective_eps(const PrecisionSpec& spec) {
  if (spec.context == KernelContext::LayerNorm) return eps_mach(spec.compute);
  if (spec.accumulate == Accumulation::Fp32Acc) return eps_mach(FpFormat::FP32);
  return eps_mach(spec.compute);
}

FpFormat parse_format(const std::string& name) {
  if (name == "fp32") return FpFormat::FP32;
  if (name == "bf16") return FpFormat::BF16;
  if (name == "fp16") return FpFormat::FP16;
  throw Error(ErrorCode::ConfigInvalid, "unknown precision format: " + name);
}

Accumulation parse_accumulation(const std::string& name) {
  if (name == "native") return Accumulation::Native;
  if (name == "fp32") return Accumulation::Fp32Acc;
  throw Error(ErrorCode::ConfigInvalid, "unknown accumulation policy: " + name);
}

std::string format_name(FpFormat f) {
  switch (f) {
    case FpFormat::FP32: return "fp32";
    case FpFormat::BF16: return "bf16";
    case FpFormat::FP16: return "fp16";
  }
  return "?";
}

std::string accumulation_name(Accumulation a) {
  return a == Accumulation::Native ? "native" : "fp32";
}

}  // namespace fragility
