#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>

#include "pcaae/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pcaae {

/// Keeps large freed blocks on the heap instead of returning them to the OS.
/// Training allocates and frees the same megabyte-sized buffers every step;
/// without this each of them is a fresh mmap with page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

/// Worker cap from PCAAE_THREADS (default: available parallelism).
inline unsigned worker_limit() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("PCAAE_THREADS");
  if (!env || !*env) return hw;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("PCAAE_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<unsigned>(v);
}

}  // namespace pcaae
