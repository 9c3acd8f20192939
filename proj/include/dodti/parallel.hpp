#pragma once

#include <cstddef>

namespace dodti {

/// Caps worker threads used by voxel loops and the denoiser (0 = runtime default).
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n) with a static partition. Every index is
/// visited exactly once and bodies must not share mutable state, so results
/// do not depend on the thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

/// Neumaier-compensated accumulator; used for all order-sensitive reductions.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if ((sum_ >= 0 ? sum_ : -sum_) >= (x >= 0 ? x : -x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace dodti
