#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "spikeforge/neuron.hpp"
#include "spikeforge/ops.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct Conv2dSpec {
    std::int64_t filters = 1;
    std::int64_t kernel = 3;
    std::int64_t padding = 0;
};
struct AvgPool2x2Spec {};
struct DenseSpec {
    std::int64_t units = 10;
};
struct SpikingSpec {
    NeuronConfig neuron;
};
struct ReluSpec {};
struct FlattenSpec {};

using LayerSpec = std::variant<Conv2dSpec, AvgPool2x2Spec, DenseSpec, SpikingSpec, ReluSpec, FlattenSpec>;

/// Layer stack plus timestep count. A spiking network must contain at least
/// one spiking activation and end in a non-spiking readout layer; a teacher
/// network must contain none.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::int64_t timesteps = 1;

    bool has_spiking() const;
    void validate_spiking() const;
    void validate_teacher() const;
};

/// Exact per-layer, per-timestep spike counts for one or more forward
/// passes. Every counted value was exactly 0 or 1 before counting.
struct SpikeRecord {
    struct Layer {
        std::int64_t layer_id = 0;      // index into NetworkSpec::layers
        std::int64_t neuron_count = 0;  // per-sample activation sites n_j
        std::vector<std::int64_t> spikes_per_step;
    };
    std::vector<Layer> layers;
    std::int64_t timesteps = 0;
    std::int64_t samples = 0;
    bool collapse = false;  // no spike anywhere in the recorded batch

    std::int64_t total_spikes() const;
    std::int64_t layer_total(std::size_t j) const;
    /// Merges counts from another record of identical topology.
    void merge(const SpikeRecord& other);
};

/// A built network: parameter tensors plus the shape bookkeeping needed to
/// run the spec on concrete input sizes.
template <typename T>
class Network {
public:
    /// input_shape is per-sample [C, H, W] (or [features] for dense-only nets).
    Network(NetworkSpec spec, Shape input_shape, std::uint64_t init_seed);

    const NetworkSpec& spec() const { return spec_; }
    const Shape& input_shape() const { return input_shape_; }
    std::int64_t classes() const { return classes_; }

    std::vector<Tensor<T>>& parameters() { return params_; }
    const std::vector<Tensor<T>>& parameters() const { return params_; }
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;

    /// Total IF/LIF activation sites per sample (pooling, readout and
    /// teacher layers excluded).
    std::int64_t total_spiking_neurons() const;
    std::vector<SpikeRecord::Layer> spiking_layer_layout() const;

    struct SpikingForward {
        Tensor<T> logits;  // [B, classes], time-averaged readout potential
        SpikeRecord record;
        /// Folded [T*B, ...] spike tensor per spiking layer, still attached
        /// to the graph; feeds activation regularization.
        std::vector<Tensor<T>> layer_spikes;
    };

    /// Presents the batch at every one of spec().timesteps steps (direct
    /// encoding), all membranes starting from zero. Raises record.collapse
    /// when the whole batch produced no spike at all; never throws for it.
    SpikingForward forward_spiking(const Tensor<T>& batch) const;

    /// Plain feed-forward pass; rejects networks containing spiking layers.
    Tensor<T> forward_teacher(const Tensor<T>& batch) const;

private:
    NetworkSpec spec_;
    Shape input_shape_;
    std::int64_t classes_ = 0;
    std::vector<Tensor<T>> params_;
    struct LayerBinding {
        int weight = -1;  // indices into params_
        int bias = -1;
        Shape in_shape;   // per-sample
        Shape out_shape;  // per-sample
    };
    std::vector<LayerBinding> bindings_;
    std::vector<std::size_t> spiking_layer_ids_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace spikeforge
