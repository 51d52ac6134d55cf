#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace natlas {

/// Splits [0, n) into contiguous chunks, one per worker, and calls
/// fn(begin, end, worker). Chunk boundaries depend only on n and threads.
template <class Fn>
void run_chunks(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::size_t(std::max(threads, 1)), n));
    if (workers == 1) {
        fn(std::size_t(0), n, std::size_t(0));
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = n * w / workers, e = n * (w + 1) / workers;
        pool.emplace_back([&fn, b, e, w] { fn(b, e, w); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace natlas
