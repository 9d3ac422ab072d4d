#pragma once

#include <vector>

#include "spikeforge/ops.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct KDConfig {
    enum class Kind { None, Mse, SoftTargets, SoftTargetsHet };
    Kind kind = Kind::None;
    double alpha = 0.1;  // weight of the cross-entropy term in [0, 1]
    double tau = 1.0;    // SoftTargets temperature
    double tau_t = 1.0;  // teacher temperature (heterogeneous)
    double tau_s = 1.0;  // student temperature (heterogeneous)
    void validate() const;
};

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> loss_cle(const Tensor<T>& student_logits, const std::vector<int>& labels);

/// Mean over the batch of the squared logit differences (summed per class).
/// The teacher side is treated as constant.
template <typename T>
Tensor<T> loss_mse_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits);

/// tau^2 * KL(p_t(tau) || p_s(tau)), mean over the batch, natural log,
/// teacher distribution constant.
template <typename T>
Tensor<T> loss_st_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, double tau);

/// tau_t * tau_s * KL(p_t(tau_t) || p_s(tau_s)), mean over the batch.
template <typename T>
Tensor<T> loss_st_het_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                         double tau_t, double tau_s);

/// alpha * L_CLE + (1 - alpha) * L_KD.
template <typename T>
Tensor<T> loss_total(const Tensor<T>& l_cle, const Tensor<T>& l_kd, double alpha);

/// Dispatch on cfg.kind; cfg.kind must not be None.
template <typename T>
Tensor<T> kd_loss(const KDConfig& cfg, const Tensor<T>& student_logits,
                  const Tensor<T>& teacher_logits);

#define SPIKEFORGE_KD_EXTERN(T)                                                              \
    extern template Tensor<T> loss_cle<T>(const Tensor<T>&, const std::vector<int>&);        \
    extern template Tensor<T> loss_mse_kd<T>(const Tensor<T>&, const Tensor<T>&);            \
    extern template Tensor<T> loss_st_kd<T>(const Tensor<T>&, const Tensor<T>&, double);     \
    extern template Tensor<T> loss_st_het_kd<T>(const Tensor<T>&, const Tensor<T>&, double,  \
                                                double);                                    \
    extern template Tensor<T> loss_total<T>(const Tensor<T>&, const Tensor<T>&, double);     \
    extern template Tensor<T> kd_loss<T>(const KDConfig&, const Tensor<T>&, const Tensor<T>&);

SPIKEFORGE_KD_EXTERN(float)
SPIKEFORGE_KD_EXTERN(double)
#undef SPIKEFORGE_KD_EXTERN

}  // namespace spikeforge
