// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Every epoch frees and re-requests the same large activation buffers. Keep
  // them in the heap instead of returning them to the kernel each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return hazelayer::cli::main_entry(argc, argv, std::cout, std::cerr);
}
