// Deterministic task-parallel map: results land in pre-sized slots keyed by
// index, so the output is identical for any worker count.
#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace cfk {

inline int& worker_count() {
    static int n = 1;
    return n;
}

template <class F>
void parallel_for_index(std::size_t count, F&& fn) {
    int workers = worker_count();
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    int spawn = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
    for (int t = 0; t < spawn; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
}

}  // namespace cfk
