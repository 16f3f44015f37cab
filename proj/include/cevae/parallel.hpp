#pragma once

namespace cevae {

// Reads CEVAE_NUM_THREADS and caps OpenMP worker count accordingly. Idempotent.
void configure_threads_from_env();

int max_threads();

}  // namespace cevae
