#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spikeforge/network.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

// Flat binary weight container:
//   magic "SPKF", version u32, entry count u32, then per parameter:
//   name length u32 + UTF-8 name, dtype tag u8 (0 = f32, 1 = f64),
//   rank u32, dims u32 each, raw little-endian values.

template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor<T>>>& named);

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_tensors(const std::string& path);

template <typename T>
void save_network_weights(const std::string& path, const Network<T>& net);

/// Loads by parameter name; every network parameter must be present with a
/// matching shape. Values stored at the other precision are converted.
template <typename T>
void load_network_weights(const std::string& path, Network<T>& net);

#define SPIKEFORGE_WIO_EXTERN(T)                                                              \
    extern template void save_tensors<T>(const std::string&,                                 \
                                         const std::vector<std::pair<std::string, Tensor<T>>>&); \
    extern template std::vector<std::pair<std::string, Tensor<T>>> load_tensors<T>(          \
        const std::string&);                                                                 \
    extern template void save_network_weights<T>(const std::string&, const Network<T>&);     \
    extern template void load_network_weights<T>(const std::string&, Network<T>&);

SPIKEFORGE_WIO_EXTERN(float)
SPIKEFORGE_WIO_EXTERN(double)
#undef SPIKEFORGE_WIO_EXTERN

}  // namespace spikeforge
