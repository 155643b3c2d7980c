#pragma once

#include <cstdint>
#include <string_view>

namespace svsl {

/// Numerical fallbacks that are handled but must never be silent.
enum class Warning : int {
  GatingUnderflow = 0,
  ResponsibilityUnderflow,
  KernelUnderflow,
  SurrogateSkipped,
  PruneFallback,
  Count_
};

/// Records a warning: bumps the per-kind counter and logs through spdlog.
void warn(Warning kind, std::string_view message);

/// Number of warnings of `kind` emitted by this process so far.
std::uint64_t warning_count(Warning kind);

std::string_view to_string(Warning kind);

}  // namespace svsl
