#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct SchedulerConfig {
    enum class Kind { None, StepLR, Cosine };
    Kind kind = Kind::None;
    double gamma = 0.5;  // StepLR multiplier
    int step_size = 30;  // StepLR period in epochs
    int t_max = 100;     // Cosine horizon in epochs
    void validate() const;
};

struct OptimizerConfig {
    enum class Kind { SgdMomentum, Adam };
    Kind kind = Kind::Adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // SGD only, in [0, 1)
    double beta1 = 0.9;     // Adam
    double beta2 = 0.999;   // Adam
    double epsilon = 1e-8;  // Adam
    SchedulerConfig scheduler;
    void validate() const;
};

/// SGD with classical momentum (v = mu*v + g; p -= lr*v) or Adam with
/// bias-corrected first/second moments (Kingma & Ba defaults). The epoch
/// scheduler rescales the base learning rate:
///   step LR:  lr = lr0 * gamma^floor(epoch / step_size)
///   cosine:   lr = lr0 * (1 + cos(pi * epoch / t_max)) / 2
template <typename T>
class Optimizer {
public:
    Optimizer(std::vector<Tensor<T>> params, OptimizerConfig cfg);

    /// Applies one update from the gradients currently on the parameters.
    /// A parameter without a gradient is a contract violation.
    void step();
    void zero_grad();

    /// Epoch-boundary scheduler hook; epoch counts from 0.
    void set_epoch(int epoch);
    double learning_rate() const { return lr_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    std::vector<Tensor<T>> params_;
    OptimizerConfig cfg_;
    double lr_;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<T>> m_;  // momentum / first moment
    std::vector<std::vector<T>> v_;  // second moment (Adam)
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace spikeforge
