#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace d3sr {

// Minimal persistent pool for data-parallel loops. Tasks write disjoint
// outputs; any cross-task reduction happens on the caller's thread in a fixed
// order, so results do not depend on the worker count.
class ThreadPool {
    struct Job {
        std::function<void(int)> fn;
        int n = 0;
        std::atomic<int> next{0};
        std::atomic<int> remaining{0};
    };

public:
    explicit ThreadPool(int n_threads) {
        n_threads = std::max(1, n_threads);
        for (int i = 0; i + 1 < n_threads; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(0..n-1); blocks until all complete. The calling thread
    // participates. Each index is executed exactly once.
    void parallel_for(int n, std::function<void(int)> fn) {
        if (n <= 0) return;
        if (n == 1 || workers_.empty()) {
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        auto job = std::make_shared<Job>();
        job->fn = std::move(fn);
        job->n = n;
        job->remaining.store(n, std::memory_order_relaxed);
        {
            std::lock_guard<std::mutex> lk(mu_);
            current_ = job;
        }
        cv_.notify_all();
        drain(*job);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
        if (current_ == job) current_.reset();
    }

    static ThreadPool& global() {
        static ThreadPool pool(global_size_override() > 0 ? global_size_override()
                                                          : default_threads());
        return pool;
    }

    // Effective only before the first global() call.
    static void set_global_threads(int n) { global_size_override() = n; }

    static int default_threads() {
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::min<unsigned>(hw == 0 ? 1 : hw, 8));
    }

private:
    static int& global_size_override() {
        static int n = 0;
        return n;
    }

    void drain(Job& job) {
        while (true) {
            int i = job.next.fetch_add(1, std::memory_order_relaxed);
            if (i >= job.n) break;
            job.fn(i);
            if (job.remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    void worker_loop() {
        while (true) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] {
                    return stop_ ||
                           (current_ && current_->next.load(std::memory_order_relaxed) < current_->n);
                });
                if (stop_) return;
                job = current_;
            }
            if (job) drain(*job);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::shared_ptr<Job> current_;
    bool stop_ = false;
};

}  // namespace d3sr
