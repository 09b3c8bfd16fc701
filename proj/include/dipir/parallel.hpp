#pragma once

#include <cstddef>
#include <functional>

namespace dipir {

/// Worker count used by parallel_for. Defaults to DIPIR_THREADS if set,
/// otherwise the hardware concurrency.
int thread_count();
/// n <= 0 restores the default.
void set_thread_count(int n);

/// Runs task(i) for i in [0, n). Tasks are independent; callers that reduce
/// must write into per-task slots and merge in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &task);

}  // namespace dipir
