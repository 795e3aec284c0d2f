#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace diffc {

/// Worker count: DIFFC_THREADS if set to a positive integer, else the
/// hardware concurrency (at least 1).
int default_workers();

/// Splits [0, count) into `workers` contiguous ranges and runs
/// fn(worker, begin, end) for each non-empty range, one thread per range.
/// The first exception thrown by any worker is rethrown after all join.
template <class Fn>
void parallel_ranges(std::size_t count, int workers, Fn&& fn) {
    if (workers < 1) workers = 1;
    if (static_cast<std::size_t>(workers) > count) workers = static_cast<int>(count);
    if (workers <= 1) {
        if (count > 0) fn(0, std::size_t{0}, count);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const std::size_t begin = count * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
        const std::size_t end = count * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
        threads.emplace_back([&, w, begin, end] {
            try {
                fn(w, begin, end);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace diffc
