#pragma once

#include <span>

#include "spikeforge/ops.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct RegConfig {
    enum class Target { Activations, Logits };
    enum class Norm { L1, L2, L2Sq };
    Target target = Target::Activations;
    Norm norm = Norm::L1;
    double lambda = 0.0;  // 0 disables the term entirely
    void validate() const;
};

/// Whole-tensor norm: L1 is a plain sum (inputs are binary activations, so
/// no absolute value is needed), L2Sq is the sum of squares, L2 its root.
template <typename T>
Tensor<T> norm_value(const Tensor<T>& t, RegConfig::Norm norm);

/// Per-layer normalized activation penalty over folded spike tensors
/// a_j of shape [T*B, ...]:
///   (1/m) * sum_j mean_batch( norm(a_j per sample) ) / (n_j * T)
/// Gradient flows into the spike tensors (and from there through the
/// surrogate into the membrane path).
template <typename T>
Tensor<T> reg_term_activations(std::span<const Tensor<T>> folded_spikes, std::int64_t timesteps,
                               RegConfig::Norm norm);

/// Batch-mean of norm(logits row) / C. L1 is rejected here; the readout is
/// real-valued, only L2 and squared L2 apply.
template <typename T>
Tensor<T> reg_term_logits(const Tensor<T>& logits, RegConfig::Norm norm);

/// base + lambda * reg.
template <typename T>
Tensor<T> loss_with_reg(const Tensor<T>& base_loss, const Tensor<T>& reg_term, double lambda);

#define SPIKEFORGE_REG_EXTERN(T)                                                               \
    extern template Tensor<T> norm_value<T>(const Tensor<T>&, RegConfig::Norm);                \
    extern template Tensor<T> reg_term_activations<T>(std::span<const Tensor<T>>, std::int64_t, \
                                                      RegConfig::Norm);                        \
    extern template Tensor<T> reg_term_logits<T>(const Tensor<T>&, RegConfig::Norm);           \
    extern template Tensor<T> loss_with_reg<T>(const Tensor<T>&, const Tensor<T>&, double);

SPIKEFORGE_REG_EXTERN(float)
SPIKEFORGE_REG_EXTERN(double)
#undef SPIKEFORGE_REG_EXTERN

}  // namespace spikeforge
