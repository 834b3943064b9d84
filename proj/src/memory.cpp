#include "covreg/memory.hpp"

#include <algorithm>

namespace covreg {
namespace memory {
namespace {
thread_local std::size_t g_current = 0;
thread_local std::size_t g_peak = 0;
}  // namespace

std::size_t current_bytes() { return g_current; }
std::size_t peak_bytes() { return g_peak; }
void reset_peak() { g_peak = g_current; }
void raise_peak(std::size_t bytes) { g_peak = std::max(g_peak, bytes); }

void on_allocate(std::size_t bytes) {
  g_current += bytes;
  g_peak = std::max(g_peak, g_current);
}

void on_deallocate(std::size_t bytes) {
  // Buffers can migrate between threads; clamp instead of wrapping.
  g_current = bytes > g_current ? 0 : g_current - bytes;
}

}  // namespace memory

PeakMemoryScope::PeakMemoryScope()
    : baseline_(memory::current_bytes()), outer_peak_(memory::peak_bytes()) {
  memory::reset_peak();
}

PeakMemoryScope::~PeakMemoryScope() {
  // Restore the enclosing high-water mark so nested scopes compose.
  memory::raise_peak(outer_peak_);
}

std::size_t PeakMemoryScope::peak_above_baseline() const {
  const std::size_t peak = memory::peak_bytes();
  return peak > baseline_ ? peak - baseline_ : 0;
}

}  // namespace covreg
