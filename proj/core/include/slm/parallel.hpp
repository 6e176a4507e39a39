#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace slm {

// Process-wide worker bound, set once from the CLI --jobs flag.
namespace detail {
inline std::atomic<int>& jobs_slot() {
    static std::atomic<int> jobs{1};
    return jobs;
}
}  // namespace detail

inline int default_jobs() { return detail::jobs_slot().load(); }
inline void set_default_jobs(int jobs) { detail::jobs_slot().store(jobs < 1 ? 1 : jobs); }

// Runs fn(i) for i in [0, n). Workers pull indices from a shared counter;
// callers must write results into per-index slots and reduce in index order
// afterwards, so the outcome never depends on the worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         int jobs = 0) {
    if (jobs <= 0) jobs = default_jobs();
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs < 1 ? 1 : jobs), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace slm
