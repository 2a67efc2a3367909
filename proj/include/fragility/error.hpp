#pragma once

#include <stdexcept>
#include <string>

namespace fragility {

enum class ErrorCode {
  DimensionMismatch,
  DimensionTooLarge,
  Overflow,
  ZeroScore,
  SmallGainViolation,
  ConstantSeries,
  NonPositiveValue,
  SampleTooSmall,
  ConfigInvalid,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fragility
