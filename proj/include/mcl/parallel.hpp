#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mcl {

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// results into per-index slots and reduce afterwards in index order, which
/// keeps outputs independent of the worker count.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    const std::size_t count = std::min(threads, n);
    {
        std::vector<std::jthread> pool;
        pool.reserve(count - 1);
        for (std::size_t t = 0; t + 1 < count; ++t) pool.emplace_back(worker);
        worker();
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace mcl
