#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeforge/tensor.hpp"

namespace spikeforge {

template <typename T>
struct Dataset {
    Tensor<T> images;         // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;  // [N], each in [0, classes)
    int classes = 0;

    std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }
    Shape sample_shape() const;  // [C, H, W]
    void validate() const;
    /// First n samples (deterministic truncation for subset experiments).
    Dataset head(std::int64_t n) const;
};

/// Reads an IDX image/label pair (big-endian headers, u8 payload). Pixels
/// are scaled by 1/255; image and label counts are cross-checked.
template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path,
                    int classes = 10);

/// Writes the dataset back out as IDX, quantizing pixels to round(v * 255).
template <typename T>
void save_idx(const std::string& images_path, const std::string& labels_path,
              const Dataset<T>& ds);

/// Gaussian class clusters with deterministic per-class means, squashed
/// into [0, 1]; linearly separable at the default spread. Images come out
/// as [N, 1, 1, dims] so dense stacks consume them after a flatten.
template <typename T>
Dataset<T> synth_blobs(int classes, int per_class, int dims, std::uint64_t seed,
                       double spread = 0.15);

/// Deterministic batch index plan: a seeded Fisher-Yates permutation when
/// shuffling, identity order otherwise; the final partial batch is kept.
std::vector<std::vector<std::int64_t>> batch_plan(std::int64_t n, std::int64_t batch_size,
                                                  std::uint64_t seed, bool shuffle);

/// Materializes one batch (images gathered, labels copied).
template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather_batch(const Dataset<T>& ds,
                                                    const std::vector<std::int64_t>& indices);

#define SPIKEFORGE_DATA_EXTERN(T)                                                              \
    extern template struct Dataset<T>;                                                        \
    extern template Dataset<T> load_idx<T>(const std::string&, const std::string&, int);      \
    extern template void save_idx<T>(const std::string&, const std::string&, const Dataset<T>&); \
    extern template Dataset<T> synth_blobs<T>(int, int, int, std::uint64_t, double);          \
    extern template std::pair<Tensor<T>, std::vector<int>> gather_batch<T>(                   \
        const Dataset<T>&, const std::vector<std::int64_t>&);

SPIKEFORGE_DATA_EXTERN(float)
SPIKEFORGE_DATA_EXTERN(double)
#undef SPIKEFORGE_DATA_EXTERN

}  // namespace spikeforge
