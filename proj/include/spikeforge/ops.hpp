#pragma once

#include <span>
#include <vector>

#include "spikeforge/tensor.hpp"

namespace spikeforge {

// Differentiable primitives. Every function validates shapes up front and
// throws std::invalid_argument naming the op and the offending shapes.
// Results are recorded on the thread's active graph whenever any input
// requires grad.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c);

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[n,in] * w[in,out] + bias[out] (bias optional: pass a default tensor).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// x[N,C,H,W], w[O,C,kh,kw], stride 1, zero padding. bias[O] optional.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t padding);

/// 2x2 average pooling with stride 2; trailing odd row/column is dropped.
template <typename T>
Tensor<T> avgpool2x2(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);

/// Sum / mean of all elements -> scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape);

/// Stacks T equal-shape step tensors into [T, ...step_shape].
template <typename T>
Tensor<T> concat_over_time(std::span<const Tensor<T>> steps);

/// x[T*B, ...] (time folded into the leading axis, t-major) -> [B];
/// out[b] = sum over t and over all trailing dims. T=1 gives per-row sums.
template <typename T>
Tensor<T> per_sample_sum_over_time(const Tensor<T>& x, std::int64_t timesteps);

/// x[T*B, C] -> [B, C]; out[b,c] = (1/T) * sum_t x[t*B+b, c].
template <typename T>
Tensor<T> time_average(const Tensor<T>& x, std::int64_t timesteps);

/// Row-wise temperature softmax p_i = exp(x_i/tau) / sum_j exp(x_j/tau),
/// stabilized by per-row max subtraction. x is [C] or [N,C]; tau > 0.
template <typename T>
Tensor<T> softmax_t(const Tensor<T>& x, double tau);
template <typename T>
Tensor<T> log_softmax_t(const Tensor<T>& x, double tau);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

enum class PrimitiveOp {
    Add,
    Sub,
    Mul,
    MatMul,
    Conv2d,
    AvgPool2x2,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Sum,
    Mean,
    Reshape,
    ConcatOverTime,
};

struct PrimitiveAttrs {
    std::int64_t padding = 0;  // Conv2d
    Shape reshape_to;          // Reshape
};

/// Uniform entry point over the primitive set; Conv2d accepts {x, w} or
/// {x, w, bias}, ConcatOverTime accepts any number of equal-shape inputs.
template <typename T>
Tensor<T> forward_primitive(PrimitiveOp op, std::span<const Tensor<T>> inputs,
                            const PrimitiveAttrs& attrs = {});

#define SPIKEFORGE_OPS_EXTERN(T)                                                              \
    extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                    \
    extern template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                    \
    extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                    \
    extern template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                            \
    extern template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                            \
    extern template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                 \
    extern template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        std::int64_t);                                       \
    extern template Tensor<T> avgpool2x2<T>(const Tensor<T>&);                               \
    extern template Tensor<T> relu<T>(const Tensor<T>&);                                     \
    extern template Tensor<T> exp<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> log<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> square<T>(const Tensor<T>&);                                   \
    extern template Tensor<T> sqrt<T>(const Tensor<T>&);                                     \
    extern template Tensor<T> sum<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> mean<T>(const Tensor<T>&);                                     \
    extern template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                           \
    extern template Tensor<T> concat_over_time<T>(std::span<const Tensor<T>>);               \
    extern template Tensor<T> per_sample_sum_over_time<T>(const Tensor<T>&, std::int64_t);   \
    extern template Tensor<T> time_average<T>(const Tensor<T>&, std::int64_t);               \
    extern template Tensor<T> softmax_t<T>(const Tensor<T>&, double);                        \
    extern template Tensor<T> log_softmax_t<T>(const Tensor<T>&, double);                    \
    extern template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);   \
    extern template Tensor<T> forward_primitive<T>(PrimitiveOp, std::span<const Tensor<T>>,  \
                                                   const PrimitiveAttrs&);

SPIKEFORGE_OPS_EXTERN(float)
SPIKEFORGE_OPS_EXTERN(double)
#undef SPIKEFORGE_OPS_EXTERN

}  // namespace spikeforge
