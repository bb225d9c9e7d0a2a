#include "somcpc/parallel.hpp"

#include <cstdlib>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace somcpc {
namespace {

thread_local bool t_in_worker = false;

// Every participant (caller + workers) runs exactly one fixed share of
// [0, n) per generation, so a run cannot return while any worker is still
// inside it and partitions never mix across generations.
class Pool {
public:
    Pool() {
        int n = 0;
        if (const char* env = std::getenv("SOMCPC_THREADS")) n = std::atoi(env);
        if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        threads_ = n;
        for (int i = 1; i < n; ++i) workers_.emplace_back([this, i] { worker_loop(i); });
    }

    ~Pool() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_task_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int threads() const { return threads_; }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        if (threads_ == 1) {
            fn(0, n);
            return;
        }
        {
            std::lock_guard lk(mu_);
            fn_ = &fn;
            total_ = n;
            done_ = 0;
            ++generation_;
        }
        cv_task_.notify_all();
        run_share(0);
        std::unique_lock lk(mu_);
        cv_done_.wait(lk, [&] { return done_ == threads_ - 1; });
        fn_ = nullptr;
    }

private:
    void run_share(int id) {
        const std::size_t n = total_;
        const std::size_t p = static_cast<std::size_t>(threads_);
        const std::size_t begin = static_cast<std::size_t>(id) * n / p;
        const std::size_t end = static_cast<std::size_t>(id + 1) * n / p;
        if (begin < end) (*fn_)(begin, end);
    }

    void worker_loop(int id) {
        t_in_worker = true;
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lk(mu_);
                cv_task_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            run_share(id);
            {
                std::lock_guard lk(mu_);
                ++done_;
            }
            cv_done_.notify_one();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_task_;
    std::condition_variable cv_done_;
    std::vector<std::thread> workers_;
    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::size_t total_ = 0;
    int done_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    int threads_ = 1;
};

Pool& pool() {
    static Pool p;
    return p;
}

}  // namespace

int thread_count() { return pool().threads(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (t_in_worker) {
        fn(0, n);
        return;
    }
    pool().run(n, fn);
}

}  // namespace somcpc
