#include "spikeforge/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace spikeforge {

void KDConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("kd: alpha must be in [0, 1]");
    if (kind == Kind::SoftTargets && !(tau > 0.0)) {
        throw std::invalid_argument("kd: temperature must be > 0");
    }
    if (kind == Kind::SoftTargetsHet && (!(tau_t > 0.0) || !(tau_s > 0.0))) {
        throw std::invalid_argument("kd: teacher/student temperatures must be > 0");
    }
}

template <typename T>
Tensor<T> loss_cle(const Tensor<T>& student_logits, const std::vector<int>& labels) {
    return cross_entropy(student_logits, labels);
}

template <typename T>
Tensor<T> loss_mse_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits) {
    if (student_logits.shape() != teacher_logits.shape()) {
        throw std::invalid_argument("loss_mse_kd: shape mismatch: " +
                                    shape_str(student_logits.shape()) + " vs " +
                                    shape_str(teacher_logits.shape()));
    }
    if (student_logits.rank() != 2) {
        throw std::invalid_argument("loss_mse_kd: expects [N,C] logits, got " +
                                    shape_str(student_logits.shape()));
    }
    const std::int64_t batch = student_logits.dim(0);
    // Per-class squared differences summed, then averaged over the batch.
    Tensor<T> diff = sub(teacher_logits.detached(), student_logits);
    return mul_scalar(sum(square(diff)), T(1) / static_cast<T>(batch));
}

namespace {

// KL(p_t || p_s) = sum p_t*ln(p_t) - sum p_t*ln(p_s). Only the second term
// depends on the student, so the first is folded into a constant. Teacher
// probabilities are computed outside the graph (no gradient to the teacher).
template <typename T>
Tensor<T> kl_distill(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                     double tau_t, double tau_s, double prefactor) {
    if (student_logits.shape() != teacher_logits.shape()) {
        throw std::invalid_argument("kd: shape mismatch: " + shape_str(student_logits.shape()) +
                                    " vs " + shape_str(teacher_logits.shape()));
    }
    if (student_logits.rank() != 2) {
        throw std::invalid_argument("kd: expects [N,C] logits, got " +
                                    shape_str(student_logits.shape()));
    }
    const std::int64_t batch = student_logits.dim(0);

    Tensor<T> teacher_logp;
    {
        NoGradScope<T> no_grad;
        teacher_logp = log_softmax_t(teacher_logits, tau_t);
    }
    // p*ln(p) via p = exp(log p); exp underflow to 0 keeps the product finite.
    Tensor<T> pt = Tensor<T>::zeros(teacher_logp.shape());
    double entropy_term = 0.0;
    {
        const T* lp = teacher_logp.data().data();
        T* pd = pt.data().data();
        for (std::int64_t i = 0; i < pt.size(); ++i) {
            pd[i] = std::exp(lp[i]);
            entropy_term += static_cast<double>(pd[i]) * static_cast<double>(lp[i]);
        }
    }

    Tensor<T> student_logp = log_softmax_t(student_logits, tau_s);
    Tensor<T> cross = sum(mul(pt, student_logp));  // sum_b sum_c p_t * ln p_s
    const T scale = static_cast<T>(prefactor / static_cast<double>(batch));
    return add_scalar(mul_scalar(cross, -scale), static_cast<T>(entropy_term) * scale);
}

}  // namespace

template <typename T>
Tensor<T> loss_st_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("loss_st_kd: temperature must be > 0");
    return kl_distill(student_logits, teacher_logits, tau, tau, tau * tau);
}

template <typename T>
Tensor<T> loss_st_het_kd(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                         double tau_t, double tau_s) {
    if (!(tau_t > 0.0) || !(tau_s > 0.0)) {
        throw std::invalid_argument("loss_st_het_kd: temperatures must be > 0");
    }
    return kl_distill(student_logits, teacher_logits, tau_t, tau_s, tau_t * tau_s);
}

template <typename T>
Tensor<T> loss_total(const Tensor<T>& l_cle, const Tensor<T>& l_kd, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("loss_total: alpha must be in [0, 1]");
    }
    return add(mul_scalar(l_cle, static_cast<T>(alpha)),
               mul_scalar(l_kd, static_cast<T>(1.0 - alpha)));
}

template <typename T>
Tensor<T> kd_loss(const KDConfig& cfg, const Tensor<T>& student_logits,
                  const Tensor<T>& teacher_logits) {
    cfg.validate();
    switch (cfg.kind) {
        case KDConfig::Kind::Mse:
            return loss_mse_kd(student_logits, teacher_logits);
        case KDConfig::Kind::SoftTargets:
            return loss_st_kd(student_logits, teacher_logits, cfg.tau);
        case KDConfig::Kind::SoftTargetsHet:
            return loss_st_het_kd(student_logits, teacher_logits, cfg.tau_t, cfg.tau_s);
        case KDConfig::Kind::None:
            break;
    }
    throw std::invalid_argument("kd_loss: kind must not be None");
}

#define SPIKEFORGE_KD_INSTANTIATE(T)                                                         \
    template Tensor<T> loss_cle<T>(const Tensor<T>&, const std::vector<int>&);               \
    template Tensor<T> loss_mse_kd<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> loss_st_kd<T>(const Tensor<T>&, const Tensor<T>&, double);            \
    template Tensor<T> loss_st_het_kd<T>(const Tensor<T>&, const Tensor<T>&, double, double); \
    template Tensor<T> loss_total<T>(const Tensor<T>&, const Tensor<T>&, double);            \
    template Tensor<T> kd_loss<T>(const KDConfig&, const Tensor<T>&, const Tensor<T>&);

SPIKEFORGE_KD_INSTANTIATE(float)
SPIKEFORGE_KD_INSTANTIATE(double)
#undef SPIKEFORGE_KD_INSTANTIATE

}  // namespace spikeforge
