#include "spikeforge/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <unordered_map>

namespace spikeforge {

namespace detail {

namespace {

template <typename T>
class BufferPool {
public:
    buffer<T> acquire(std::size_t n) {
        auto it = pools_.find(n);
        if (it != pools_.end() && !it->second.empty()) {
            buffer<T> b = std::move(it->second.back());
            it->second.pop_back();
            bytes_ -= n * sizeof(T);
            return b;
        }
        buffer<T> b;
        b.resize(n);
        return b;
    }

    void release(buffer<T>&& b) {
        const std::size_t n = b.size();
        if (n * sizeof(T) < kMinPooledBytes || bytes_ + n * sizeof(T) > kMaxBytes) {
            return;  // drop small or excess buffers
        }
        auto& bucket = pools_[n];
        if (bucket.size() >= 4) return;
        bytes_ += n * sizeof(T);
        bucket.push_back(std::move(b));
    }

private:
    static constexpr std::size_t kMinPooledBytes = 1u << 16;
    static constexpr std::size_t kMaxBytes = std::size_t(3) << 30;
    std::unordered_map<std::size_t, std::vector<buffer<T>>> pools_;
    std::size_t bytes_ = 0;
};

template <typename T>
BufferPool<T>& pool() {
    static thread_local BufferPool<T> p;
    return p;
}

}  // namespace

template <typename T>
buffer<T> acquire_buffer(std::size_t n) {
    return pool<T>().acquire(n);
}

template <typename T>
void release_buffer(buffer<T>&& b) {
    pool<T>().release(std::move(b));
}

template buffer<float> acquire_buffer<float>(std::size_t);
template buffer<double> acquire_buffer<double>(std::size_t);
template void release_buffer<float>(buffer<float>&&);
template void release_buffer<double>(buffer<double>&&);

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::uninitialized(Shape shape, bool requires_grad) {
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->data = detail::acquire_buffer<T>(static_cast<std::size_t>(numel(s->shape)));
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    std::memset(t.st().data.data(), 0, t.st().data.size() * sizeof(T));
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    Tensor t = uninitialized(std::move(shape), requires_grad);
    std::copy(values.begin(), values.end(), t.st().data.begin());
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

template <typename T>
typename Tensor<T>::Storage& Tensor<T>::st() {
    if (!s_) throw std::runtime_error("Tensor: use of undefined tensor");
    return *s_;
}

template <typename T>
const typename Tensor<T>::Storage& Tensor<T>::st() const {
    if (!s_) throw std::runtime_error("Tensor: use of undefined tensor");
    return *s_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    return st().shape;
}

template <typename T>
std::int64_t Tensor<T>::size() const {
    return static_cast<std::int64_t>(st().data.size());
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t i) const {
    const auto& sh = st().shape;
    if (i >= sh.size()) throw std::out_of_range("Tensor::dim index out of range");
    return sh[i];
}

template <typename T>
std::size_t Tensor<T>::rank() const {
    return st().shape.size();
}

template <typename T>
std::span<T> Tensor<T>::data() {
    return {st().data.data(), st().data.size()};
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    return {st().data.data(), st().data.size()};
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) {
        throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(size()) +
                                    " elements, expected 1");
    }
    return st().data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return st().requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool rg) {
    st().requires_grad = rg;
    if (!rg) st().grad.clear();
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return !st().grad.empty();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    if (!has_grad()) throw std::runtime_error("Tensor::grad: no gradient present");
    return {st().grad.data(), st().grad.size()};
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor::grad: no gradient present");
    return {st().grad.data(), st().grad.size()};
}

template <typename T>
void Tensor<T>::ensure_grad() {
    if (!st().requires_grad) {
        throw std::logic_error("Tensor: gradient requested on requires_grad=false tensor");
    }
    if (st().grad.empty()) {
        st().grad = detail::acquire_buffer<T>(st().data.size());
        std::memset(st().grad.data(), 0, st().grad.size() * sizeof(T));
    }
}

template <typename T>
void Tensor<T>::reset_grad() {
    detail::release_buffer(std::move(st().grad));
    st().grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(st().grad.begin(), st().grad.end(), T(0));
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> g) {
    if (!st().requires_grad) {
        throw std::logic_error("Tensor: gradient accumulated into requires_grad=false tensor");
    }
    if (static_cast<std::int64_t>(g.size()) != size()) {
        throw std::invalid_argument("Tensor: gradient size mismatch");
    }
    ensure_grad();
    T* dst = st().grad.data();
    const T* src = g.data();
    const std::int64_t n = size();
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) dst[i] += src[i];
    });
}

template <typename T>
void Tensor<T>::accumulate_grad_scaled(std::span<const T> g, T scale) {
    if (!st().requires_grad) {
        throw std::logic_error("Tensor: gradient accumulated into requires_grad=false tensor");
    }
    if (static_cast<std::int64_t>(g.size()) != size()) {
        throw std::invalid_argument("Tensor: gradient size mismatch");
    }
    ensure_grad();
    T* dst = st().grad.data();
    const T* src = g.data();
    parallel_for(size(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) dst[i] += scale * src[i];
    });
}

template <typename T>
void Tensor<T>::accumulate_grad_broadcast(T value) {
    if (!st().requires_grad) {
        throw std::logic_error("Tensor: gradient accumulated into requires_grad=false tensor");
    }
    ensure_grad();
    T* dst = st().grad.data();
    parallel_for(size(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) dst[i] += value;
    });
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out = uninitialized(shape(), st().requires_grad);
    std::copy(st().data.begin(), st().data.end(), out.st().data.begin());
    return out;
}

template <typename T>
Tensor<T> Tensor<T>::detached() const {
    Tensor out = uninitialized(shape(), false);
    std::copy(st().data.begin(), st().data.end(), out.st().data.begin());
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
void Graph<T>::record(std::string op, std::vector<Tensor<T>> inputs,
                      std::vector<Tensor<T>> outputs, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(outputs), std::move(backward)});
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss does not depend on any requires_grad tensor");
    }
    // Non-leaf grads are transient: reset them, then reseed the loss.
    for (auto& node : nodes_) {
        for (auto& out : node.outputs) out.reset_grad();
    }
    Tensor<T> seed = loss;
    seed.ensure_grad();
    seed.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        bool any = false;
        for (const auto& out : it->outputs) {
            if (out.has_grad()) {
                any = true;
                break;
            }
        }
        if (any && it->backward) it->backward();
    }
}

template <typename T>
void Graph<T>::clear() {
    nodes_.clear();
}

// ---------------------------------------------------------------------------

namespace {
template <typename T>
Graph<T>*& active_slot() {
    static thread_local Graph<T>* g = nullptr;
    return g;
}
}  // namespace

template <typename T>
Graph<T>* active_graph() {
    return active_slot<T>();
}

template <typename T>
RecordScope<T>::RecordScope(Graph<T>& g) : prev_(active_slot<T>()) {
    active_slot<T>() = &g;
}

template <typename T>
RecordScope<T>::~RecordScope() {
    active_slot<T>() = prev_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : prev_(active_slot<T>()) {
    active_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
    active_slot<T>() = prev_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    Graph<T>* g = active_graph<T>();
    if (!g) throw std::runtime_error("backward: no graph is recording on this thread");
    g->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template class RecordScope<float>;
template class RecordScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Graph<float>* active_graph<float>();
template Graph<double>* active_graph<double>();
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace spikeforge
