#include "sid/parallel.hpp"

#include <algorithm>
#include <cstdlib>

namespace sid {

static int configured_threads() {
    if (const char* env = std::getenv("SID_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

ThreadPool::ThreadPool() {
    int n = configured_threads();
    for (int i = 1; i < n; ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        stop_ = true;
    }
    cv_start_.notify_all();
    for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop() {
    uint64_t seen = 0;
    for (;;) {
        Job* job;
        {
            std::unique_lock<std::mutex> lock(mu_);
            cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            job = job_;
        }
        run_chunks(*job->fn);
        if (job->remaining_workers.fetch_sub(1) == 1) {
            std::lock_guard<std::mutex> lock(mu_);
            cv_done_.notify_all();
        }
    }
}

void ThreadPool::run_chunks(const std::function<void(int64_t, int64_t)>& fn) {
    Job* job = job_;
    for (;;) {
        int64_t c = job->next_chunk.fetch_add(1);
        if (c >= job->chunk_count) break;
        int64_t begin = c * job->chunk_size;
        int64_t end = std::min(begin + job->chunk_size, job->total);
        if (begin >= end) break;
        try {
            fn(begin, end);
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu_);
            if (!error_) error_ = std::current_exception();
        }
    }
}

void ThreadPool::parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int threads = thread_count();
    if (threads == 1 || n == 1) {
        fn(0, n);
        return;
    }

    Job job;
    job.fn = &fn;
    job.total = n;
    job.chunk_count = std::min<int64_t>(n, int64_t(threads) * 4);
    job.chunk_size = (n + job.chunk_count - 1) / job.chunk_count;
    job.remaining_workers.store(static_cast<int>(workers_.size()));

    {
        std::lock_guard<std::mutex> lock(mu_);
        error_ = nullptr;
        job_ = &job;
        ++generation_;
    }
    cv_start_.notify_all();
    run_chunks(fn);
    {
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return job.remaining_workers.load() == 0; });
        job_ = nullptr;
        if (error_) std::rethrow_exception(error_);
    }
}

}  // namespace sid
