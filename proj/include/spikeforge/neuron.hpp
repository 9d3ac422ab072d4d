#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "spikeforge/tensor.hpp"

namespace spikeforge {

/// Integrate-and-fire dynamics: the membrane accumulates input current and
/// emits a binary spike once it reaches the threshold. The leaky variant
/// decays the membrane by `leak` each step; leak == 1 is exactly IF.
struct NeuronConfig {
    enum class Kind { IF, LIF };
    enum class Reset { HardZero, SoftSubtract };

    Kind kind = Kind::IF;
    double threshold = 1.0;       // theta > 0
    double leak = 1.0;            // beta in (0, 1]; IF requires beta == 1
    Reset reset = Reset::HardZero;
    double surrogate_slope = 25.0;  // k > 0

    void validate() const;
};

/// Fast-sigmoid surrogate derivative g(x) = 1 / (k|x| + 1)^2, evaluated at
/// x = u - theta. Peaks at 1 when the membrane sits exactly at threshold.
template <typename T>
T surrogate_grad(T u_minus_theta, T k);

/// upstream * g(u - theta); the stand-in for dH/du used during backward.
template <typename T>
Tensor<T> surrogate_backward(const Tensor<T>& u_minus_theta, const Tensor<T>& upstream, double k);

/// One membrane update:
///   u  = leak * V + input
///   s  = 1 if u >= theta else 0
///   V' = u - s*theta (soft-subtract) or u*(1 - s) (hard-zero)
/// The reset contribution of s is excluded from the gradient; the only
/// gradient path through s is the surrogate.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> spike_step(const Tensor<T>& membrane, const Tensor<T>& input_current,
                                           const NeuronConfig& cfg);

/// Runs the spike_step recurrence for `timesteps` steps as a single fused
/// graph node, starting from a zero membrane.
///
/// With folded_input = false, `current` is [B, ...]: a static drive
/// presented identically at every step. With folded_input = true it is
/// [T*B, ...] with time folded t-major into the leading axis. The output
/// is always the folded spike tensor [T*B, ...]; values are exactly 0 or 1.
/// When `per_step_counts` is given it receives the exact number of spikes
/// emitted at each timestep.
template <typename T>
Tensor<T> spiking_activation_over_time(const Tensor<T>& current, std::int64_t timesteps,
                                       bool folded_input, const NeuronConfig& cfg,
                                       std::vector<std::int64_t>* per_step_counts = nullptr);

extern template float surrogate_grad<float>(float, float);
extern template double surrogate_grad<double>(double, double);
extern template Tensor<float> surrogate_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                                        double);
extern template Tensor<double> surrogate_backward<double>(const Tensor<double>&,
                                                          const Tensor<double>&, double);
extern template std::pair<Tensor<float>, Tensor<float>> spike_step<float>(const Tensor<float>&,
                                                                          const Tensor<float>&,
                                                                          const NeuronConfig&);
extern template std::pair<Tensor<double>, Tensor<double>> spike_step<double>(const Tensor<double>&,
                                                                             const Tensor<double>&,
                                                                             const NeuronConfig&);
extern template Tensor<float> spiking_activation_over_time<float>(const Tensor<float>&, std::int64_t,
                                                                  bool, const NeuronConfig&,
                                                                  std::vector<std::int64_t>*);
extern template Tensor<double> spiking_activation_over_time<double>(const Tensor<double>&,
                                                                    std::int64_t, bool,
                                                                    const NeuronConfig&,
                                                                    std::vector<std::int64_t>*);

}  // namespace spikeforge
