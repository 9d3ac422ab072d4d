#include "spikeforge/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace spikeforge {

bool NetworkSpec::has_spiking() const {
    for (const auto& l : layers) {
        if (std::holds_alternative<SpikingSpec>(l)) return true;
    }
    return false;
}

void NetworkSpec::validate_spiking() const {
    if (layers.empty()) throw std::invalid_argument("network: empty layer list");
    if (timesteps < 1) throw std::invalid_argument("network: timesteps must be >= 1");
    if (!has_spiking()) {
        throw std::invalid_argument("network: spiking network needs at least one spiking activation");
    }
    if (std::holds_alternative<SpikingSpec>(layers.back())) {
        throw std::invalid_argument("network: readout layer must be non-spiking");
    }
    if (!std::holds_alternative<DenseSpec>(layers.back())) {
        throw std::invalid_argument("network: spiking network must end in a dense readout");
    }
    for (const auto& l : layers) {
        if (const auto* s = std::get_if<SpikingSpec>(&l)) s->neuron.validate();
    }
}

void NetworkSpec::validate_teacher() const {
    if (layers.empty()) throw std::invalid_argument("network: empty layer list");
    if (has_spiking()) {
        throw std::invalid_argument("network: teacher must not contain spiking layers");
    }
}

std::int64_t SpikeRecord::total_spikes() const {
    std::int64_t total = 0;
    for (const auto& l : layers) {
        for (auto c : l.spikes_per_step) total += c;
    }
    return total;
}

std::int64_t SpikeRecord::layer_total(std::size_t j) const {
    std::int64_t total = 0;
    for (auto c : layers.at(j).spikes_per_step) total += c;
    return total;
}

void SpikeRecord::merge(const SpikeRecord& other) {
    if (layers.empty()) {
        *this = other;
        return;
    }
    if (other.layers.size() != layers.size() || other.timesteps != timesteps) {
        throw std::invalid_argument("spike record: topology mismatch in merge");
    }
    for (std::size_t j = 0; j < layers.size(); ++j) {
        if (layers[j].layer_id != other.layers[j].layer_id ||
            layers[j].neuron_count != other.layers[j].neuron_count) {
            throw std::invalid_argument("spike record: layer layout mismatch in merge");
        }
        for (std::size_t t = 0; t < layers[j].spikes_per_step.size(); ++t) {
            layers[j].spikes_per_step[t] += other.layers[j].spikes_per_step[t];
        }
    }
    samples += other.samples;
    collapse = total_spikes() == 0;
}

namespace {

Shape conv_out_shape(const Conv2dSpec& c, const Shape& in) {
    if (in.size() != 3) {
        throw std::invalid_argument("conv layer expects [C,H,W] input, got " + shape_str(in));
    }
    const std::int64_t ho = in[1] + 2 * c.padding - c.kernel + 1;
    const std::int64_t wo = in[2] + 2 * c.padding - c.kernel + 1;
    if (ho <= 0 || wo <= 0) {
        throw std::invalid_argument("conv kernel " + std::to_string(c.kernel) +
                                    " does not fit input " + shape_str(in));
    }
    return {c.filters, ho, wo};
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, Shape input_shape, std::uint64_t init_seed)
    : spec_(std::move(spec)), input_shape_(std::move(input_shape)) {
    if (spec_.layers.empty()) throw std::invalid_argument("network: empty layer list");
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        std::mt19937_64 rng(derive_seed(init_seed, i));
        LayerBinding bind;
        bind.in_shape = cur;
        const LayerSpec& layer = spec_.layers[i];
        if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            cur = conv_out_shape(*c, cur);
            const std::int64_t fan_in = bind.in_shape[0] * c->kernel * c->kernel;
            bind.weight = static_cast<int>(params_.size());
            params_.push_back(kaiming_uniform<T>({c->filters, bind.in_shape[0], c->kernel, c->kernel},
                                                 fan_in, rng));
            bind.bias = static_cast<int>(params_.size());
            params_.push_back(Tensor<T>::zeros({c->filters}, true));
        } else if (std::holds_alternative<AvgPool2x2Spec>(layer)) {
            if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
                throw std::invalid_argument("avgpool layer expects [C,H>=2,W>=2], got " +
                                            shape_str(cur));
            }
            cur = {cur[0], cur[1] / 2, cur[2] / 2};
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            if (cur.size() != 1) {
                throw std::invalid_argument("dense layer expects flattened input, got " +
                                            shape_str(cur) + " (add a flatten layer)");
            }
            const std::int64_t fan_in = cur[0];
            bind.weight = static_cast<int>(params_.size());
            params_.push_back(kaiming_uniform<T>({fan_in, d->units}, fan_in, rng));
            bind.bias = static_cast<int>(params_.size());
            params_.push_back(Tensor<T>::zeros({d->units}, true));
            cur = {d->units};
        } else if (std::holds_alternative<SpikingSpec>(layer)) {
            spiking_layer_ids_.push_back(i);
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
            cur = {numel(cur)};
        }
        // ReluSpec keeps the shape.
        bind.out_shape = cur;
        bindings_.push_back(std::move(bind));
    }
    classes_ = numel(cur);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Network<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
        const auto& b = bindings_[i];
        if (b.weight >= 0) {
            out.emplace_back("layer" + std::to_string(i) + ".weight", params_[b.weight]);
        }
        if (b.bias >= 0) {
            out.emplace_back("layer" + std::to_string(i) + ".bias", params_[b.bias]);
        }
    }
    return out;
}

template <typename T>
std::int64_t Network<T>::total_spiking_neurons() const {
    std::int64_t total = 0;
    for (auto id : spiking_layer_ids_) total += numel(bindings_[id].out_shape);
    return total;
}

template <typename T>
std::vector<SpikeRecord::Layer> Network<T>::spiking_layer_layout() const {
    std::vector<SpikeRecord::Layer> out;
    for (auto id : spiking_layer_ids_) {
        SpikeRecord::Layer l;
        l.layer_id = static_cast<std::int64_t>(id);
        l.neuron_count = numel(bindings_[id].out_shape);
        l.spikes_per_step.assign(static_cast<std::size_t>(spec_.timesteps), 0);
        out.push_back(std::move(l));
    }
    return out;
}

namespace {

template <typename T>
Shape with_batch(std::int64_t rows, const Shape& per_sample) {
    Shape s;
    s.reserve(per_sample.size() + 1);
    s.push_back(rows);
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

template <typename T>
void check_batch(const Tensor<T>& batch, const Shape& per_sample) {
    bool ok = batch.rank() == per_sample.size() + 1;
    for (std::size_t i = 0; ok && i < per_sample.size(); ++i) {
        ok = batch.dim(i + 1) == per_sample[i];
    }
    if (!ok) {
        throw std::invalid_argument("network: batch shape " + shape_str(batch.shape()) +
                                    " does not match input shape " + shape_str(per_sample));
    }
}

}  // namespace

template <typename T>
typename Network<T>::SpikingForward Network<T>::forward_spiking(const Tensor<T>& batch) const {
    spec_.validate_spiking();
    check_batch(batch, input_shape_);
    const std::int64_t B = batch.dim(0);
    const std::int64_t T_steps = spec_.timesteps;
    SpikingForward result;
    result.record.timesteps = T_steps;
    result.record.samples = B;

    Tensor<T> h = batch;
    bool folded = false;  // becomes true after the first spiking layer
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& bind = bindings_[i];
        const LayerSpec& layer = spec_.layers[i];
        if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            h = conv2d(h, params_[bind.weight], params_[bind.bias], c->padding);
        } else if (std::holds_alternative<AvgPool2x2Spec>(layer)) {
            h = avgpool2x2(h);
        } else if (std::holds_alternative<DenseSpec>(layer)) {
            h = linear(h, params_[bind.weight], params_[bind.bias]);
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            h = relu(h);
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
            h = reshape(h, with_batch<T>(h.dim(0), bind.out_shape));
        } else if (const auto* s = std::get_if<SpikingSpec>(&layer)) {
            SpikeRecord::Layer rec;
            rec.layer_id = static_cast<std::int64_t>(i);
            rec.neuron_count = numel(bind.out_shape);
            h = spiking_activation_over_time(h, T_steps, folded, s->neuron, &rec.spikes_per_step);
            folded = true;
            result.record.layers.push_back(std::move(rec));
            result.layer_spikes.push_back(h);
        }
    }
    if (!folded) throw std::logic_error("forward_spiking: no spiking layer executed");
    // h is the readout pre-activation, [T*B, classes]; the logits are its
    // accumulated potential averaged over the T presentations.
    result.logits = time_average(h, T_steps);
    result.record.collapse = result.record.total_spikes() == 0;
    return result;
}

template <typename T>
Tensor<T> Network<T>::forward_teacher(const Tensor<T>& batch) const {
    spec_.validate_teacher();
    check_batch(batch, input_shape_);
    Tensor<T> h = batch;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& bind = bindings_[i];
        const LayerSpec& layer = spec_.layers[i];
        if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            h = conv2d(h, params_[bind.weight], params_[bind.bias], c->padding);
        } else if (std::holds_alternative<AvgPool2x2Spec>(layer)) {
            h = avgpool2x2(h);
        } else if (std::holds_alternative<DenseSpec>(layer)) {
            h = linear(h, params_[bind.weight], params_[bind.bias]);
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            h = relu(h);
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
            h = reshape(h, with_batch<T>(h.dim(0), bind.out_shape));
        }
    }
    return h;
}

template class Network<float>;
template class Network<double>;

}  // namespace spikeforge
