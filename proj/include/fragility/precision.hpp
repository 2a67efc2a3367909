#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "fragility/error.hpp"

namespace fragility {

/// Floating-point formats whose rounding behaviour we emulate. Values are
/// stored in double precision throughout; emulated kernels re-round after
/// every scalar operation.
enum class FpFormat { FP32, BF16, FP16 };

enum class Accumulation { Native, Fp32Acc };

/// LayerNorm kernels run entirely in the compute precision; everything else
/// follows the accumulator rule.
enum class KernelContext { General, LayerNorm };

constexpr int mantissa_bits(FpFormat f) {
  switch (f) {
    case FpFormat::FP32: return 23;
    case FpFormat::BF16: return 7;
    case FpFormat::FP16: return 10;
  }
  return 0;
}

/// Unit roundoff: 2^-23 (FP32), 2^-7 (BF16), 2^-10 (FP16).
constexpr double eps_mach(FpFormat f) {
  switch (f) {
    case FpFormat::FP32: return 0x1p-23;
    case FpFormat::BF16: return 0x1p-7;
    case FpFormat::FP16: return 0x1p-10;
  }
  return 0.0;
}

// Smallest normal exponent and largest finite value per format.
constexpr int min_normal_exp(FpFormat f) {
  return f == FpFormat::FP16 ? -14 : -126;
}

constexpr double max_finite(FpFormat f) {
  switch (f) {
    case FpFormat::FP32: return (2.0 - 0x1p-23) * 0x1p127;
    case FpFormat::BF16: return (2.0 - 0x1p-7) * 0x1p127;
    case FpFormat::FP16: return 65504.0;  // (2 - 2^-10) * 2^15
  }
  return 0.0;
}

/// Round-to-nearest-even into the target format's representable set,
/// including subnormals. Overflow maps to signed infinity. Subnormals are
/// kept unless flush_subnormals is set.
double round_to(FpFormat f, double x, bool flush_subnormals = false);

/// As round_to, but throws Error(Overflow) when a finite input rounds to
/// infinity.
double round_to_strict(FpFormat f, double x, bool flush_subnormals = false);

struct PrecisionSpec {
  FpFormat compute = FpFormat::FP32;
  Accumulation accumulate = Accumulation::Native;
  KernelContext context = KernelContext::General;
  bool flush_subnormals = false;

  /// Compute == FP32 is the reference arm: kernels run in plain double.
  bool is_reference() const { return compute == FpFormat::FP32; }

  PrecisionSpec with_context(KernelContext ctx) const {
    PrecisionSpec s = *this;
    s.context = ctx;
    return s;
  }
};

/// Accumulator rule: FP32 accumulation gives the accumulator's roundoff in
/// GENERAL context; LayerNorm always uses the compute precision.
double effective_eps(const PrecisionSpec& spec);

/// Per-op rounding helper for emulated kernels. `c` rounds in the compute
/// format, `a` in the accumulation format.
struct Rounder {
  FpFormat compute;
  FpFormat acc;
  bool flush;

  explicit Rounder(const PrecisionSpec& spec)
      : compute(spec.compute),
        acc(spec.context == KernelContext::LayerNorm
                ? spec.compute
                : (spec.accumulate == Accumulation::Fp32Acc ? FpFormat::FP32
                                                            : spec.compute)),
        flush(spec.flush_subnormals) {}

  double c(double x) const { return round_to(compute, x, flush); }
  double a(double x) const { return round_to(acc, x, flush); }
};

// Config-file spellings: "fp32" | "bf16" | "fp16", "native" | "fp32".
FpFormat parse_format(const std::string& name);
Accumulation parse_accumulation(const std::string& name);
std::string format_name(FpFormat f);
std::string accumulation_name(Accumulation a);

}  // namespace fragility
