#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace eitcs {

// Worker count used by parallel_for; defaults to the hardware concurrency.
int thread_count();
void set_thread_count(int n);

namespace detail {
bool& in_parallel_region();
}

// Calls body(i) for every i in [0, count). Work items must write to
// disjoint outputs; results are then independent of the thread count.
// Nested calls run serially on the calling worker.
template <class Body>
void parallel_for(int count, Body&& body)
{
    const int workers = std::min(thread_count(), count);
    if (workers <= 1 || detail::in_parallel_region()) {
        for (int i = 0; i < count; ++i)
            body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto run = [&] {
        detail::in_parallel_region() = true;
        for (int i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_lock);
                if (!failure)
                    failure = std::current_exception();
            }
        }
        detail::in_parallel_region() = false;
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int t = 1; t < workers; ++t)
        pool.emplace_back(run);
    run();
    for (auto& th : pool)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace eitcs
