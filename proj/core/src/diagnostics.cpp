#include "svsl/diagnostics.hpp"

#include <array>
#include <atomic>

#include <spdlog/spdlog.h>

namespace svsl {
namespace {

constexpr auto kWarningKinds = static_cast<std::size_t>(Warning::Count_);

std::array<std::atomic<std::uint64_t>, kWarningKinds>& counters() {
  static std::array<std::atomic<std::uint64_t>, kWarningKinds> c{};
  return c;
}

}  // namespace

void warn(Warning kind, std::string_view message) {
  counters()[static_cast<std::size_t>(kind)].fetch_add(1, std::memory_order_relaxed);
  spdlog::warn("[{}] {}", to_string(kind), message);
}

std::uint64_t warning_count(Warning kind) {
  return counters()[static_cast<std::size_t>(kind)].load(std::memory_order_relaxed);
}

std::string_view to_string(Warning kind) {
  switch (kind) {
    case Warning::GatingUnderflow: return "gating-underflow";
    case Warning::ResponsibilityUnderflow: return "responsibility-underflow";
    case Warning::KernelUnderflow: return "kernel-underflow";
    case Warning::SurrogateSkipped: return "surrogate-skipped";
    case Warning::PruneFallback: return "prune-fallback";
    case Warning::Count_: break;
  }
  return "unknown";
}

}  // namespace svsl
