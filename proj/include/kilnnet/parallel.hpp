#pragma once

#include <cstddef>
#include <functional>

namespace kiln {

/// Upper bound on worker threads used by parallel_for. Defaults to 1.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, n). Iterations are split into contiguous chunks,
/// one per worker. Callers write per-index results to distinct slots and
/// reduce them afterwards in ascending index order, so results do not depend
/// on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace kiln
