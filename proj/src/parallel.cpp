#include "dodti/parallel.hpp"

#include <Eigen/Core>
#include <omp.h>

namespace dodti {

void set_thread_count(int threads) {
  if (threads <= 0) threads = omp_get_num_procs();
  omp_set_num_threads(threads);
  Eigen::setNbThreads(threads);
}

int thread_count() { return omp_get_max_threads(); }

}  // namespace dodti
