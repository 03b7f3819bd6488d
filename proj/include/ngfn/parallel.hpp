#pragma once

#include <functional>

namespace ngfn {

// Worker count: NGFN_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
int n_threads();

// Runs fn(i) for i in [0, n) across n_threads() workers in static chunks.
// fn must be safe to call concurrently for distinct i; results must not
// depend on execution order (callers derive per-index rng seeds). The first
// exception thrown by any worker is rethrown after all workers join.
void parallel_for(long n, const std::function<void(long)>& fn);

}  // namespace ngfn
