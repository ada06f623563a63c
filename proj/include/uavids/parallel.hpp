#pragma once

#include <cstddef>
#include <functional>

namespace uavids {

/// Number of workers to use when the caller asks for `requested` (0 = hardware).
std::size_t resolve_threads(std::size_t requested);

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; callers write results by index so output does not depend on
/// scheduling. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace uavids
