#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace sctreg {

namespace detail {
inline std::atomic<int>& thread_setting()
{
    static std::atomic<int> setting{0};
    return setting;
}
} // namespace detail

/// Cap the worker pool used by parallel sections. 0 selects hardware concurrency.
inline void set_threads(int n) { detail::thread_setting().store(std::max(0, n)); }

inline int effective_threads()
{
    const int s = detail::thread_setting().load();
    if (s > 0) return s;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Fixed chunk count used by reductions. Partial results are combined in chunk
/// order, so reductions are independent of the number of worker threads.
inline constexpr std::size_t kReductionChunks = 16;

/// Calls fn(chunk, begin, end) for `chunks` contiguous slices of [0, n).
/// Chunk boundaries depend only on n and chunks; workers pick chunks round-robin.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunks, Fn&& fn)
{
    chunks = std::max<std::size_t>(1, chunks);
    auto bounds = [&](std::size_t c) { return n * c / chunks; };
    const auto workers = static_cast<std::size_t>(
        std::min<std::size_t>(static_cast<std::size_t>(effective_threads()), chunks));
    if (workers <= 1 || n < 2 * chunks) {
        for (std::size_t c = 0; c < chunks; ++c) fn(c, bounds(c), bounds(c + 1));
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> failures(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < chunks; c += workers) fn(c, bounds(c), bounds(c + 1));
            } catch (...) {
                failures[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);
}

/// Element-wise loop with no cross-iteration state.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const auto chunks = static_cast<std::size_t>(effective_threads());
    parallel_chunks(n, chunks, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    });
}

} // namespace sctreg
