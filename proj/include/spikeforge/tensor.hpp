#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spikeforge/common.hpp"

namespace spikeforge {

namespace detail {

// Allocator whose default-construct is a no-op for trivial T, so resize()
// does not touch pages that the producing kernel is about to overwrite.
template <typename T>
struct uninit_alloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = uninit_alloc<U>;
    };
    template <typename U>
    void construct(U*) noexcept {}
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using buffer = std::vector<T, uninit_alloc<T>>;

/// Size-recycling buffer pool (per thread). Training touches the same
/// handful of large sizes every batch; recycling avoids an mmap/page-fault
/// round trip per allocation.
template <typename T>
buffer<T> acquire_buffer(std::size_t n);
template <typename T>
void release_buffer(buffer<T>&& b);

}  // namespace detail

/// Dense n-dimensional array with an optional gradient buffer.
///
/// Tensor is a cheap handle onto shared storage; ops produce fresh storage
/// and treat their inputs as immutable. Only tensors with
/// requires_grad == true ever accumulate gradient.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    /// Allocation without value initialization; for kernels that overwrite
    /// every element before the tensor escapes.
    static Tensor uninitialized(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const;
    std::int64_t size() const;
    std::int64_t dim(std::size_t i) const;
    std::size_t rank() const;

    std::span<T> data();
    std::span<const T> data() const;
    /// Value of a one-element tensor.
    T item() const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);
    bool has_grad() const;
    std::span<T> grad();
    std::span<const T> grad() const;
    /// Allocates a zero gradient buffer if absent.
    void ensure_grad();
    /// Drops the gradient buffer entirely.
    void reset_grad();
    void zero_grad();
    void accumulate_grad(std::span<const T> g);
    /// grad += scale * g, without materializing a temporary.
    void accumulate_grad_scaled(std::span<const T> g, T scale);
    /// grad[i] += value for every i (gradient of a plain sum).
    void accumulate_grad_broadcast(T value);

    /// Deep copy of the values; no gradient, no graph history.
    Tensor clone() const;
    /// Deep copy with requires_grad = false (constant w.r.t. any loss).
    Tensor detached() const;

    /// Identity of the underlying storage (used by tests).
    const void* storage_id() const { return s_.get(); }

private:
    struct Storage {
        Shape shape;
        detail::buffer<T> data;
        detail::buffer<T> grad;  // empty until touched
        bool requires_grad = false;
        ~Storage() {
            detail::release_buffer(std::move(data));
            detail::release_buffer(std::move(grad));
        }
    };
    explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}
    Storage& st();
    const Storage& st() const;
    std::shared_ptr<Storage> s_;
};

/// Wengert list: primitive executions recorded in order. backward() replays
/// the list strictly in reverse execution order, so no topological sort is
/// ever needed and repeated calls keep accumulating into leaf gradients.
template <typename T>
class Graph {
public:
    struct Node {
        std::string op;
        std::vector<Tensor<T>> inputs;   // saved handles; immutable by contract
        std::vector<Tensor<T>> outputs;
        std::function<void()> backward;  // reads output grads, accumulates input grads
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void record(std::string op, std::vector<Tensor<T>> inputs, std::vector<Tensor<T>> outputs,
                std::function<void()> backward);

    /// Seeds d(loss)/d(loss) = 1 and walks the list backwards. Non-leaf
    /// gradients are cleared first; leaf gradients accumulate across calls.
    void backward(const Tensor<T>& loss);

    void clear();
    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }

private:
    std::vector<Node> nodes_;
};

/// Currently recording graph for this thread (nullptr = inference mode).
template <typename T>
Graph<T>* active_graph();

/// RAII: makes `g` the recording target on this thread.
template <typename T>
class RecordScope {
public:
    explicit RecordScope(Graph<T>& g);
    RecordScope(const RecordScope&) = delete;
    RecordScope& operator=(const RecordScope&) = delete;
    ~RecordScope();

private:
    Graph<T>* prev_;
};

/// RAII: suspends recording (teacher evaluation, metrics passes).
template <typename T>
class NoGradScope {
public:
    NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;
    ~NoGradScope();

private:
    Graph<T>* prev_;
};

/// Backward through the active graph; the usual entry point in training code.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;
extern template class RecordScope<float>;
extern template class RecordScope<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;
extern template Graph<float>* active_graph<float>();
extern template Graph<double>* active_graph<double>();
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace spikeforge
