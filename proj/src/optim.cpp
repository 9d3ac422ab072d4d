#include "spikeforge/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace spikeforge {

void SchedulerConfig::validate() const {
    if (kind == Kind::StepLR) {
        if (!(gamma > 0.0 && gamma <= 1.0)) {
            throw std::invalid_argument("scheduler: gamma must be in (0, 1]");
        }
        if (step_size < 1) throw std::invalid_argument("scheduler: step_size must be >= 1");
    }
    if (kind == Kind::Cosine && t_max < 1) {
        throw std::invalid_argument("scheduler: t_max must be >= 1");
    }
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("optimizer: learning_rate must be > 0");
    if (kind == Kind::SgdMomentum && !(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
    }
    if (kind == Kind::Adam) {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw std::invalid_argument("optimizer: betas must be in [0, 1)");
        }
        if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer: epsilon must be > 0");
    }
    scheduler.validate();
}

template <typename T>
Optimizer<T>::Optimizer(std::vector<Tensor<T>> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.learning_rate) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params_[i].size()), T(0));
        if (cfg_.kind == OptimizerConfig::Kind::Adam) {
            v_[i].assign(static_cast<std::size_t>(params_[i].size()), T(0));
        }
    }
}

template <typename T>
void Optimizer<T>::step() {
    for (const auto& p : params_) {
        if (!p.has_grad()) {
            throw std::runtime_error("optimizer: parameter is missing its gradient");
        }
    }
    ++step_count_;
    const T lr = static_cast<T>(lr_);
    if (cfg_.kind == OptimizerConfig::Kind::SgdMomentum) {
        const T mu = static_cast<T>(cfg_.momentum);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto pd = params_[i].data();
            auto g = params_[i].grad();
            T* mom = m_[i].data();
            const std::int64_t n = params_[i].size();
            parallel_for(n, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t j = b; j < e; ++j) {
                    mom[j] = mu * mom[j] + g[j];
                    pd[j] -= lr * mom[j];
                }
            });
        }
        return;
    }
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.epsilon);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(step_count_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(step_count_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto pd = params_[i].data();
        auto g = params_[i].grad();
        T* mm = m_[i].data();
        T* vv = v_[i].data();
        const std::int64_t n = params_[i].size();
        parallel_for(n, [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t j = b; j < e; ++j) {
                mm[j] = b1 * mm[j] + (T(1) - b1) * g[j];
                vv[j] = b2 * vv[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = mm[j] / bc1;
                const T vhat = vv[j] / bc2;
                pd[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        });
    }
}

template <typename T>
void Optimizer<T>::zero_grad() {
    for (auto& p : params_) {
        p.ensure_grad();
        p.zero_grad();
    }
}

template <typename T>
void Optimizer<T>::set_epoch(int epoch) {
    if (epoch < 0) throw std::invalid_argument("optimizer: epoch must be >= 0");
    const auto& s = cfg_.scheduler;
    switch (s.kind) {
        case SchedulerConfig::Kind::None:
            lr_ = cfg_.learning_rate;
            break;
        case SchedulerConfig::Kind::StepLR:
            lr_ = cfg_.learning_rate * std::pow(s.gamma, static_cast<double>(epoch / s.step_size));
            break;
        case SchedulerConfig::Kind::Cosine: {
            const double t = std::min<double>(epoch, s.t_max);
            lr_ = cfg_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t / s.t_max));
            break;
        }
    }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace spikeforge
