#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spikeforge {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Global worker-thread setting shared by the BLAS backend and the
/// element-wise kernels. 0 selects the hardware concurrency.
void set_thread_count(int n);
int thread_count();

/// Runs fn(begin, end) over static index chunks, one per worker.
/// Chunk boundaries depend only on n and the configured thread count,
/// so reductions combined in chunk order are reproducible. Work stays on
/// the calling thread while n < grain.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain = 4096);

/// Chunk-ordered parallel reduction; deterministic for a fixed thread count.
double parallel_sum(std::int64_t n, const std::function<double(std::int64_t, std::int64_t)>& chunk_sum);

/// Deterministic pipelined range sum: eight fixed partials combined in
/// order. A plain accumulation loop would serialize on FP add latency.
template <typename T>
inline double sum_range(const T* __restrict p, std::int64_t n) {
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) acc[l] += static_cast<double>(p[i + l]);
    }
    for (; i < n; ++i) acc[0] += static_cast<double>(p[i]);
    double total = 0;
    for (int l = 0; l < 8; ++l) total += acc[l];
    return total;
}

/// splitmix64-style stream derivation so each consumer (init, shuffle, ...)
/// gets an independent deterministic seed from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// FNV-1a over a byte string; used for config hashing.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace spikeforge
