#pragma once

#include <cstdint>
#include <functional>

namespace tenreg {

/// Worker count resolution: explicit request > TENREG_THREADS > hardware.
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, n) across the given number of workers. The
/// first exception thrown by any worker is rethrown on the caller thread.
/// Callers must make writes for distinct i disjoint.
void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace tenreg
