#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sid {

// Persistent worker pool for data-parallel loops. Work items must write
// disjoint outputs; partitioning never affects results, so outputs stay
// bit-identical for any thread count (including SID_THREADS=1).
class ThreadPool {
public:
    static ThreadPool& instance();

    // Calls fn(begin, end) over a partition of [0, n). Blocks until done.
    // Exceptions from fn propagate to the caller (first one wins).
    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

    int thread_count() const { return static_cast<int>(workers_.size()) + 1; }

    ~ThreadPool();

private:
    ThreadPool();
    void worker_loop();
    void run_chunks(const std::function<void(int64_t, int64_t)>& fn);

    struct Job {
        const std::function<void(int64_t, int64_t)>* fn = nullptr;
        std::atomic<int64_t> next_chunk{0};
        int64_t chunk_count = 0;
        int64_t chunk_size = 0;
        int64_t total = 0;
        std::atomic<int> remaining_workers{0};
    };

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    Job* job_ = nullptr;
    uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace sid
