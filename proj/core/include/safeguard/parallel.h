#pragma once

#include <functional>

namespace safeguard {

// Worker count: SAFEGUARD_THREADS if set to a positive integer, otherwise
// the hardware concurrency (at least 1).
int ThreadBudget();

// Runs fn(i) for i in [begin, end) on up to ThreadBudget() threads. The
// first exception thrown by any call is rethrown after all workers finish.
void ParallelFor(int begin, int end, const std::function<void(int)>& fn);

// Evaluates probe(i) for i = 0, 1, ... in chunks of ThreadBudget() and
// returns the smallest index for which it returned true, or -1. Every index
// up to the end of the winning chunk is evaluated, so the result does not
// depend on completion order.
int FirstHit(int count, const std::function<bool(int)>& probe);

}  // namespace safeguard
