#pragma once

#include <cstddef>
#include <new>

namespace covreg {

// Per-thread accounting of bytes held by tensor buffers. Peak tracking is
// done inside the allocator rather than from OS RSS so that numbers are
// comparable across platforms and unaffected by allocator caching.
namespace memory {

std::size_t current_bytes();
std::size_t peak_bytes();
// Resets the high-water mark to the current usage.
void reset_peak();
// Raises the high-water mark to at least `bytes`.
void raise_peak(std::size_t bytes);

void on_allocate(std::size_t bytes);
void on_deallocate(std::size_t bytes);

}  // namespace memory

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    memory::on_allocate(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory::on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

// RAII scope measuring the tensor-memory high-water mark above the usage at
// construction time.
class PeakMemoryScope {
 public:
  PeakMemoryScope();
  ~PeakMemoryScope();
  PeakMemoryScope(const PeakMemoryScope&) = delete;
  PeakMemoryScope& operator=(const PeakMemoryScope&) = delete;

  std::size_t peak_above_baseline() const;

 private:
  std::size_t baseline_;
  std::size_t outer_peak_;
};

}  // namespace covreg
