#include "eitcs/parallel.hpp"

#include <algorithm>

namespace eitcs {

namespace {
std::atomic<int> g_threads{0};
}

int thread_count()
{
    const int n = g_threads.load();
    if (n > 0)
        return n;
    return std::max(1u, std::thread::hardware_concurrency());
}

void set_thread_count(int n)
{
    g_threads.store(std::max(0, n));
}

bool& detail::in_parallel_region()
{
    thread_local bool flag = false;
    return flag;
}

} // namespace eitcs
