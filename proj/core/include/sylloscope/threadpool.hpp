#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace syl {

inline int default_workers() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Splits [0, n) into contiguous chunks, one per worker, and runs
/// fn(begin, end) on each. Chunk boundaries depend only on (n, workers),
/// so any index-ordered reduction done by the caller is deterministic.
inline void parallel_for(int64_t n, int workers, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    workers = std::max(1, std::min(workers, static_cast<int>(std::min<int64_t>(n, 1 << 20))));
    if (workers == 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t begin = w * chunk;
        int64_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : threads) t.join();
}

}  // namespace syl
