#include "spikeforge/regularize.hpp"

#include <stdexcept>

namespace spikeforge {

void RegConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("reg: lambda must be >= 0");
    if (target == Target::Logits && norm == Norm::L1) {
        throw std::invalid_argument("reg: L1 applies to binary activations, not logits");
    }
}

template <typename T>
Tensor<T> norm_value(const Tensor<T>& t, RegConfig::Norm norm) {
    switch (norm) {
        case RegConfig::Norm::L1:
            return sum(t);  // binary inputs: |t_i| == t_i
        case RegConfig::Norm::L2Sq:
            return sum(square(t));
        case RegConfig::Norm::L2:
            return sqrt(sum(square(t)));
    }
    throw std::invalid_argument("norm_value: unknown norm");
}

template <typename T>
Tensor<T> reg_term_activations(std::span<const Tensor<T>> folded_spikes, std::int64_t timesteps,
                               RegConfig::Norm norm) {
    if (folded_spikes.empty()) {
        throw std::invalid_argument("reg_term_activations: no activation tensors (m = 0)");
    }
    if (timesteps < 1) throw std::invalid_argument("reg_term_activations: timesteps must be >= 1");
    Tensor<T> total;
    for (const auto& a : folded_spikes) {
        if (a.rank() < 1 || a.dim(0) % timesteps != 0) {
            throw std::invalid_argument("reg_term_activations: tensor " + shape_str(a.shape()) +
                                        " is not folded over T=" + std::to_string(timesteps));
        }
        const std::int64_t neurons = a.size() / a.dim(0);  // n_j per sample
        // Per-sample norm over all timesteps, then batch mean, then the
        // n_j * T normalization.
        Tensor<T> per_sample;
        switch (norm) {
            case RegConfig::Norm::L1:
                per_sample = per_sample_sum_over_time(a, timesteps);
                break;
            case RegConfig::Norm::L2Sq:
                per_sample = per_sample_sum_over_time(square(a), timesteps);
                break;
            case RegConfig::Norm::L2:
                per_sample = sqrt(per_sample_sum_over_time(square(a), timesteps));
                break;
        }
        Tensor<T> layer_term =
            mul_scalar(mean(per_sample), T(1) / static_cast<T>(neurons * timesteps));
        total = total.defined() ? add(total, layer_term) : layer_term;
    }
    return mul_scalar(total, T(1) / static_cast<T>(folded_spikes.size()));
}

template <typename T>
Tensor<T> reg_term_logits(const Tensor<T>& logits, RegConfig::Norm norm) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("reg_term_logits: expects [N,C] logits, got " +
                                    shape_str(logits.shape()));
    }
    if (norm == RegConfig::Norm::L1) {
        throw std::invalid_argument("reg_term_logits: L1 applies to binary activations, not logits");
    }
    const std::int64_t classes = logits.dim(1);
    Tensor<T> per_sample = per_sample_sum_over_time(square(logits), 1);
    if (norm == RegConfig::Norm::L2) per_sample = sqrt(per_sample);
    return mul_scalar(mean(per_sample), T(1) / static_cast<T>(classes));
}

template <typename T>
Tensor<T> loss_with_reg(const Tensor<T>& base_loss, const Tensor<T>& reg_term, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("loss_with_reg: lambda must be >= 0");
    return add(base_loss, mul_scalar(reg_term, static_cast<T>(lambda)));
}

#define SPIKEFORGE_REG_INSTANTIATE(T)                                                       \
    template Tensor<T> norm_value<T>(const Tensor<T>&, RegConfig::Norm);                    \
    template Tensor<T> reg_term_activations<T>(std::span<const Tensor<T>>, std::int64_t,    \
                                               RegConfig::Norm);                            \
    template Tensor<T> reg_term_logits<T>(const Tensor<T>&, RegConfig::Norm);               \
    template Tensor<T> loss_with_reg<T>(const Tensor<T>&, const Tensor<T>&, double);

SPIKEFORGE_REG_INSTANTIATE(float)
SPIKEFORGE_REG_INSTANTIATE(double)
#undef SPIKEFORGE_REG_INSTANTIATE

}  // namespace spikeforge
