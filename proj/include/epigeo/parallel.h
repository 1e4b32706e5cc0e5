#pragma once

#include <cstddef>
#include <functional>

namespace epigeo {

// Worker count: `requested` if positive, else EPIGEO_THREADS, else the
// hardware concurrency. EPIGEO_THREADS also caps an explicit request.
int ResolveThreadCount(int requested = 0);

// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
// write results into per-index slots so the output never depends on the
// schedule.
void ParallelFor(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace epigeo
