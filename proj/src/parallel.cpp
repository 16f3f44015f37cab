#include "cevae/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace cevae {

void configure_threads_from_env() {
  const char* env = std::getenv("CEVAE_NUM_THREADS");
  if (env == nullptr || *env == '\0') return;
  try {
    const int n = std::stoi(env);
    if (n >= 1) omp_set_num_threads(n);
  } catch (const std::exception&) {
    // malformed values are ignored; the OpenMP default stays in effect
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace cevae
