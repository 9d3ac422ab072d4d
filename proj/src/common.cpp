#include "spikeforge/common.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#ifdef SPIKEFORGE_USE_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace spikeforge {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

// Minimal persistent pool. dispatch() hands every worker the same task;
// the caller does its own share between dispatch() and wait().
class WorkerPool {
public:
    explicit WorkerPool(int workers) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i); });
        }
    }

    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int workers() const { return static_cast<int>(threads_.size()); }

    void dispatch(const std::function<void(int)>& task) {
        std::lock_guard<std::mutex> lk(mu_);
        task_ = &task;
        pending_ = workers();
        ++generation_;
        cv_.notify_all();
    }

    void wait() {
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        task_ = nullptr;
    }

private:
    void worker_loop(int index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* task = nullptr;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                task = task_;
            }
            (*task)(index);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* task_ = nullptr;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

std::atomic<int> g_threads{0};  // 0 = auto
std::mutex g_pool_mu;
std::unique_ptr<WorkerPool> g_pool;
thread_local bool tl_in_region = false;  // nested/worker calls run serial

int resolve_threads() {
    const int configured = g_threads.load(std::memory_order_relaxed);
    if (configured > 0) return configured;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

constexpr std::int64_t kParallelThreshold = 4096;

// Runs fn over nt static chunks of [0, n): chunk 0 on the calling thread,
// the rest on pool workers. Chunk layout depends only on (n, nt).
void run_chunked(std::int64_t n, int nt,
                 const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    const std::int64_t chunk = (n + nt - 1) / nt;
    auto run_chunk = [&](int idx) {
        const std::int64_t b = idx * chunk;
        const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
        if (b < e) {
            tl_in_region = true;
            fn(idx, b, e);
            tl_in_region = false;
        }
    };
    std::lock_guard<std::mutex> lk(g_pool_mu);
    if (!g_pool || g_pool->workers() != nt - 1) {
        g_pool = std::make_unique<WorkerPool>(nt - 1);
    }
    std::function<void(int)> task = [&](int worker) { run_chunk(worker + 1); };
    g_pool->dispatch(task);
    run_chunk(0);
    g_pool->wait();
}

}  // namespace

void set_thread_count(int n) {
    g_threads.store(n > 0 ? n : 0, std::memory_order_relaxed);
#ifdef SPIKEFORGE_USE_OPENBLAS
    openblas_set_num_threads(resolve_threads());
#endif
}

int thread_count() { return resolve_threads(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain) {
    if (n <= 0) return;
    const int nt = static_cast<int>(std::min<std::int64_t>(resolve_threads(), n));
    if (nt <= 1 || n < grain || tl_in_region) {
        fn(0, n);
        return;
    }
    run_chunked(n, nt, [&](int, std::int64_t b, std::int64_t e) { fn(b, e); });
}

double parallel_sum(std::int64_t n, const std::function<double(std::int64_t, std::int64_t)>& chunk_sum) {
    if (n <= 0) return 0.0;
    const int nt = static_cast<int>(std::min<std::int64_t>(resolve_threads(), n));
    if (nt <= 1 || n < kParallelThreshold || tl_in_region) return chunk_sum(0, n);
    std::vector<double> partial(static_cast<std::size_t>(nt), 0.0);
    run_chunked(n, nt, [&](int idx, std::int64_t b, std::int64_t e) {
        partial[static_cast<std::size_t>(idx)] = chunk_sum(b, e);
    });
    double total = 0.0;
    for (double p : partial) total += p;  // fixed chunk order
    return total;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace spikeforge
