#include "rxm/parallel.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rxm::parallel {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int threads) {
  g_threads = std::max(1, threads);
#ifdef _OPENMP
  omp_set_num_threads(g_threads);
#endif
}

int num_threads() { return g_threads; }

}  // namespace rxm::parallel
