#include "spikeforge/neuron.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spikeforge {

void NeuronConfig::validate() const {
    if (!(threshold > 0.0)) throw std::invalid_argument("neuron: threshold must be > 0");
    if (!(surrogate_slope > 0.0)) throw std::invalid_argument("neuron: surrogate slope must be > 0");
    if (!(leak > 0.0 && leak <= 1.0)) throw std::invalid_argument("neuron: leak must be in (0, 1]");
    if (kind == Kind::IF && leak != 1.0) {
        throw std::invalid_argument("neuron: IF requires leak == 1 (got " + std::to_string(leak) + ")");
    }
}

template <typename T>
T surrogate_grad(T u_minus_theta, T k) {
    const T d = k * std::abs(u_minus_theta) + T(1);
    return T(1) / (d * d);
}

template <typename T>
Tensor<T> surrogate_backward(const Tensor<T>& u_minus_theta, const Tensor<T>& upstream, double k) {
    if (u_minus_theta.shape() != upstream.shape()) {
        throw std::invalid_argument("surrogate_backward: shape mismatch: " +
                                    shape_str(u_minus_theta.shape()) + " vs " +
                                    shape_str(upstream.shape()));
    }
    if (!(k > 0.0)) throw std::invalid_argument("surrogate_backward: slope must be > 0");
    Tensor<T> out = Tensor<T>::zeros(u_minus_theta.shape());
    const T* x = u_minus_theta.data().data();
    const T* g = upstream.data().data();
    T* od = out.data().data();
    const T kt = static_cast<T>(k);
    parallel_for(out.size(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) od[i] = g[i] * surrogate_grad(x[i], kt);
    });
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> spike_step(const Tensor<T>& membrane,
                                           const Tensor<T>& input_current,
                                           const NeuronConfig& cfg) {
    cfg.validate();
    if (membrane.shape() != input_current.shape()) {
        throw std::invalid_argument("spike_step: shape mismatch: " + shape_str(membrane.shape()) +
                                    " vs " + shape_str(input_current.shape()));
    }
    const T beta = static_cast<T>(cfg.leak);
    const T theta = static_cast<T>(cfg.threshold);
    const bool hard = cfg.reset == NeuronConfig::Reset::HardZero;
    const std::int64_t n = membrane.size();

    Tensor<T> spikes = Tensor<T>::uninitialized(membrane.shape());
    Tensor<T> next_v = Tensor<T>::uninitialized(membrane.shape());
    std::vector<T> u_minus_theta(static_cast<std::size_t>(n));
    const T* vd = membrane.data().data();
    const T* id = input_current.data().data();
    T* sd = spikes.data().data();
    T* nd = next_v.data().data();
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) {
            const T u = beta * vd[i] + id[i];
            const T s = (u >= theta) ? T(1) : T(0);
            sd[i] = s;
            nd[i] = hard ? u * (T(1) - s) : u - s * theta;
            u_minus_theta[static_cast<std::size_t>(i)] = u - theta;
        }
    });

    Graph<T>* g = active_graph<T>();
    if (g && (membrane.requires_grad() || input_current.requires_grad())) {
        Tensor<T> vv = membrane, iv = input_current, sv = spikes, nv = next_v;
        sv.set_requires_grad(true);
        nv.set_requires_grad(true);
        const T k = static_cast<T>(cfg.surrogate_slope);
        g->record("spike_step", {membrane, input_current}, {spikes, next_v},
                  [vv, iv, sv, nv, u = std::move(u_minus_theta), beta, k, hard, n]() mutable {
                      const T* gs = sv.has_grad() ? sv.grad().data() : nullptr;
                      const T* gv = nv.has_grad() ? nv.grad().data() : nullptr;
                      if (!gs && !gv) return;
                      const T* sd = sv.data().data();
                      std::vector<T> du(static_cast<std::size_t>(n));
                      parallel_for(n, [&](std::int64_t b, std::int64_t e) {
                          for (std::int64_t i = b; i < e; ++i) {
                              T acc = 0;
                              if (gs) acc += gs[i] * surrogate_grad(u[static_cast<std::size_t>(i)], k);
                              if (gv) {
                                  // reset factor is constant w.r.t. the graph
                                  const T r = hard ? (T(1) - sd[i]) : T(1);
                                  acc += gv[i] * r;
                              }
                              du[static_cast<std::size_t>(i)] = acc;
                          }
                      });
                      if (iv.requires_grad()) iv.accumulate_grad(du);
                      if (vv.requires_grad()) vv.accumulate_grad_scaled(du, beta);
                  });
    }
    return {spikes, next_v};
}

template <typename T>
Tensor<T> spiking_activation_over_time(const Tensor<T>& current, std::int64_t timesteps,
                                       bool folded_input, const NeuronConfig& cfg,
                                       std::vector<std::int64_t>* per_step_counts) {
    cfg.validate();
    if (timesteps < 1) throw std::invalid_argument("spiking_activation: timesteps must be >= 1");
    if (current.rank() < 1) {
        throw std::invalid_argument("spiking_activation: scalar input not supported");
    }
    if (folded_input && current.dim(0) % timesteps != 0) {
        throw std::invalid_argument("spiking_activation: folded input " +
                                    shape_str(current.shape()) + " is not divisible by T=" +
                                    std::to_string(timesteps));
    }
    const std::int64_t step = folded_input ? current.size() / timesteps : current.size();
    const T beta = static_cast<T>(cfg.leak);
    const T theta = static_cast<T>(cfg.threshold);
    const bool hard = cfg.reset == NeuronConfig::Reset::HardZero;

    Shape out_shape = current.shape();
    out_shape[0] = folded_input ? out_shape[0] : out_shape[0] * timesteps;
    Tensor<T> spikes = Tensor<T>::uninitialized(std::move(out_shape));

    std::vector<T> membrane(static_cast<std::size_t>(step), T(0));
    std::vector<T> u_minus_theta(static_cast<std::size_t>(step * timesteps));
    const T* in = current.data().data();
    T* sd = spikes.data().data();
    T* vd = membrane.data();
    T* ud = u_minus_theta.data();
    if (per_step_counts) per_step_counts->assign(static_cast<std::size_t>(timesteps), 0);

    for (std::int64_t t = 0; t < timesteps; ++t) {
        const T* __restrict it = folded_input ? in + t * step : in;
        T* __restrict st = sd + t * step;
        T* __restrict ut = ud + t * step;
        // Branch-free membrane update (pass 1), then a pipelined count of
        // the freshly written binary spikes (pass 2, exact: every partial
        // stays far below 2^53).
        T* __restrict vr = vd;
        if (hard) {
            parallel_for(step, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) {
                    const T u = beta * vr[i] + it[i];
                    const bool fire = u >= theta;
                    st[i] = fire ? T(1) : T(0);
                    ut[i] = u - theta;
                    vr[i] = fire ? T(0) : u;
                }
            });
        } else {
            parallel_for(step, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) {
                    const T u = beta * vr[i] + it[i];
                    const bool fire = u >= theta;
                    st[i] = fire ? T(1) : T(0);
                    ut[i] = u - theta;
                    vr[i] = fire ? u - theta : u;
                }
            });
        }
        if (per_step_counts) {
            const double fired = parallel_sum(
                step, [&](std::int64_t b, std::int64_t e) { return sum_range(st + b, e - b); });
            (*per_step_counts)[static_cast<std::size_t>(t)] =
                static_cast<std::int64_t>(fired + 0.5);
        }
    }

    Graph<T>* g = active_graph<T>();
    if (g && current.requires_grad()) {
        Tensor<T> iv = current, sv = spikes;
        sv.set_requires_grad(true);
        const T k = static_cast<T>(cfg.surrogate_slope);
        g->record(
            "spiking_activation", {current}, {spikes},
            [iv, sv, u = std::move(u_minus_theta), beta, k, hard, folded_input, timesteps,
             step]() mutable {
                if (!sv.has_grad()) return;
                const T* gs = sv.grad().data();
                const T* sd = sv.data().data();
                const T* ud = u.data();
                iv.ensure_grad();
                T* gi = iv.grad().data();
                // BPTT: du_t = gs_t * g'(u_t - theta) + beta * r_t * du_{t+1},
                // where the reset factor r_t is 1 (soft-subtract) or 1 - s_t
                // (hard-zero) and carries no surrogate of its own.
                std::vector<T> du_next(static_cast<std::size_t>(step), T(0));
                T* dn = du_next.data();
                for (std::int64_t t = timesteps - 1; t >= 0; --t) {
                    const T* __restrict gst = gs + t * step;
                    const T* __restrict ut = ud + t * step;
                    const T* __restrict st = sd + t * step;
                    T* __restrict git = folded_input ? gi + t * step : gi;
                    parallel_for(step, [&](std::int64_t b, std::int64_t e) {
                        for (std::int64_t i = b; i < e; ++i) {
                            const T r = hard ? (T(1) - st[i]) : T(1);
                            const T du = gst[i] * surrogate_grad(ut[i], k) + beta * r * dn[i];
                            dn[i] = du;
                            git[i] += du;
                        }
                    });
                }
            });
    }
    return spikes;
}

template float surrogate_grad<float>(float, float);
template double surrogate_grad<double>(double, double);
template Tensor<float> surrogate_backward<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> surrogate_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                   double);
template std::pair<Tensor<float>, Tensor<float>> spike_step<float>(const Tensor<float>&,
                                                                   const Tensor<float>&,
                                                                   const NeuronConfig&);
template std::pair<Tensor<double>, Tensor<double>> spike_step<double>(const Tensor<double>&,
                                                                      const Tensor<double>&,
                                                                      const NeuronConfig&);
template Tensor<float> spiking_activation_over_time<float>(const Tensor<float>&, std::int64_t, bool,
                                                           const NeuronConfig&,
                                                           std::vector<std::int64_t>*);
template Tensor<double> spiking_activation_over_time<double>(const Tensor<double>&, std::int64_t,
                                                             bool, const NeuronConfig&,
                                                             std::vector<std::int64_t>*);

}  // namespace spikeforge
