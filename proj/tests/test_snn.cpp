#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "spikeforge/network.hpp"
#include "spikeforge/neuron.hpp"
#include "spikeforge/ops.hpp"
#include "spikeforge/weights_io.hpp"

using spikeforge::AvgPool2x2Spec;
using spikeforge::Conv2dSpec;
using spikeforge::DenseSpec;
using spikeforge::FlattenSpec;
using spikeforge::Graph;
using spikeforge::Network;
using spikeforge::NetworkSpec;
using spikeforge::NeuronConfig;
using spikeforge::RecordScope;
using spikeforge::ReluSpec;
using spikeforge::Shape;
using spikeforge::SpikingSpec;
using Tensor = spikeforge::Tensor<double>;

namespace {

NeuronConfig if_neuron(double theta = 1.0, NeuronConfig::Reset reset = NeuronConfig::Reset::HardZero) {
    NeuronConfig cfg;
    cfg.kind = NeuronConfig::Kind::IF;
    cfg.threshold = theta;
    cfg.leak = 1.0;
    cfg.reset = reset;
    return cfg;
}

NeuronConfig lif_neuron(double leak, double theta = 1.0,
                        NeuronConfig::Reset reset = NeuronConfig::Reset::HardZero) {
    NeuronConfig cfg;
    cfg.kind = NeuronConfig::Kind::LIF;
    cfg.threshold = theta;
    cfg.leak = leak;
    cfg.reset = reset;
    return cfg;
}

// Scalar recurrence oracle for one neuron under a per-step drive sequence.
template <typename T>
std::vector<T> scalar_spike_train(const std::vector<T>& drive, const NeuronConfig& cfg) {
    std::vector<T> spikes;
    T v = 0;
    for (T input : drive) {
        const T u = static_cast<T>(cfg.leak) * v + input;
        const T s = (u >= static_cast<T>(cfg.threshold)) ? T(1) : T(0);
        v = cfg.reset == NeuronConfig::Reset::HardZero ? u * (T(1) - s)
                                                       : u - s * static_cast<T>(cfg.threshold);
        spikes.push_back(s);
    }
    return spikes;
}

NetworkSpec mnist_student(std::int64_t timesteps = 10) {
    NetworkSpec net;
    net.timesteps = timesteps;
    net.layers = {Conv2dSpec{16, 5, 0}, SpikingSpec{if_neuron()}, AvgPool2x2Spec{},
                  Conv2dSpec{64, 5, 0}, SpikingSpec{if_neuron()}, AvgPool2x2Spec{},
                  FlattenSpec{},        DenseSpec{10}};
    return net;
}

}  // namespace

TEST_CASE("neuron config validation") {
    CHECK_THROWS_AS(if_neuron(0.0).validate(), std::invalid_argument);
    NeuronConfig bad_if = if_neuron();
    bad_if.leak = 0.9;  // IF demands leak == 1
    CHECK_THROWS_AS(bad_if.validate(), std::invalid_argument);
    CHECK_THROWS_AS(lif_neuron(0.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(lif_neuron(1.2).validate(), std::invalid_argument);
    NeuronConfig bad_k = if_neuron();
    bad_k.surrogate_slope = 0.0;
    CHECK_THROWS_AS(bad_k.validate(), std::invalid_argument);
}

TEST_CASE("spike_step examples") {
    SUBCASE("IF hard-zero fires at 1.2 and resets to 0") {
        auto v = Tensor::scalar(0.6);
        auto in = Tensor::scalar(0.6);
        auto [s, v2] = spikeforge::spike_step(v, in, if_neuron());
        CHECK(s.item() == 1.0);
        CHECK(v2.item() == 0.0);
    }
    SUBCASE("LIF pure leak: V=1, input=0, beta=0.9 -> u=0.9, no spike") {
        auto v = Tensor::scalar(1.0);
        auto in = Tensor::scalar(0.0);
        auto [s, v2] = spikeforge::spike_step(v, in, lif_neuron(0.9));
        CHECK(s.item() == 0.0);
        CHECK(v2.item() == doctest::Approx(0.9));
    }
    SUBCASE("soft-subtract keeps the residual") {
        auto v = Tensor::scalar(0.6);
        auto in = Tensor::scalar(0.6);
        auto [s, v2] =
            spikeforge::spike_step(v, in, if_neuron(1.0, NeuronConfig::Reset::SoftSubtract));
        CHECK(s.item() == 1.0);
        CHECK(v2.item() == doctest::Approx(0.2));
    }
    SUBCASE("shape mismatch rejected") {
        auto v = Tensor::zeros({2});
        auto in = Tensor::zeros({3});
        CHECK_THROWS_AS(spikeforge::spike_step(v, in, if_neuron()), std::invalid_argument);
    }
}

TEST_CASE("IF constant drive 0.4: spikes at steps 3, 5, 8 over T=8 (soft-subtract)") {
    const auto cfg = if_neuron(1.0, NeuronConfig::Reset::SoftSubtract);
    std::vector<double> drive(8, 0.4);
    const auto oracle = scalar_spike_train(drive, cfg);
    std::vector<int> fired;
    for (std::size_t t = 0; t < oracle.size(); ++t) {
        if (oracle[t] == 1.0) fired.push_back(static_cast<int>(t) + 1);
    }
    CHECK(fired == std::vector<int>{3, 5, 8});

    // The layer implementation must reproduce the oracle exactly.
    auto current = Tensor::scalar(0.4);
    std::vector<std::int64_t> counts;
    auto spikes = spikeforge::spiking_activation_over_time(current, 8, false, cfg, &counts);
    for (std::size_t t = 0; t < 8; ++t) {
        CHECK(spikes.data()[t] == oracle[t]);
        CHECK(counts[t] == static_cast<std::int64_t>(oracle[t]));
    }
}

TEST_CASE("layer spike trains match the scalar recurrence on random drive, both resets, f32+f64") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> dist(-0.2, 0.8);
    for (auto reset : {NeuronConfig::Reset::HardZero, NeuronConfig::Reset::SoftSubtract}) {
        for (double leak : {1.0, 0.9, 0.5}) {
            NeuronConfig cfg = leak == 1.0 ? if_neuron(1.0, reset) : lif_neuron(leak, 1.0, reset);
            const std::int64_t T = 20, B = 7;
            // Folded drive: [T*B, 1] with t-major rows.
            std::vector<double> drive(static_cast<std::size_t>(T * B));
            for (auto& v : drive) v = dist(rng);
            auto folded = Tensor::from_data({T * B, 1}, std::vector<double>(drive));
            std::vector<std::int64_t> counts;
            auto spikes = spikeforge::spiking_activation_over_time(folded, T, true, cfg, &counts);
            for (std::int64_t b = 0; b < B; ++b) {
                std::vector<double> neuron_drive(static_cast<std::size_t>(T));
                for (std::int64_t t = 0; t < T; ++t) {
                    neuron_drive[static_cast<std::size_t>(t)] =
                        drive[static_cast<std::size_t>(t * B + b)];
                }
                const auto oracle = scalar_spike_train(neuron_drive, cfg);
                for (std::int64_t t = 0; t < T; ++t) {
                    CHECK(spikes.data()[t * B + b] == oracle[static_cast<std::size_t>(t)]);
                }
            }
            // f32 run agrees with an f32 oracle bit-for-bit.
            std::vector<float> drive32(drive.begin(), drive.end());
            auto folded32 =
                spikeforge::Tensor<float>::from_data({T * B, 1}, std::vector<float>(drive32));
            auto spikes32 =
                spikeforge::spiking_activation_over_time(folded32, T, true, cfg, nullptr);
            for (std::int64_t b = 0; b < B; ++b) {
                std::vector<float> neuron_drive(static_cast<std::size_t>(T));
                for (std::int64_t t = 0; t < T; ++t) {
                    neuron_drive[static_cast<std::size_t>(t)] =
                        drive32[static_cast<std::size_t>(t * B + b)];
                }
                const auto oracle = scalar_spike_train(neuron_drive, cfg);
                for (std::int64_t t = 0; t < T; ++t) {
                    CHECK(spikes32.data()[t * B + b] == oracle[static_cast<std::size_t>(t)]);
                }
            }
        }
    }
}

TEST_CASE("LIF with beta=1 is bit-identical to IF") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-0.3, 0.9);
    auto drive = Tensor::zeros({60, 4});
    for (auto& v : drive.data()) v = dist(rng);
    NeuronConfig lif1 = lif_neuron(1.0);
    auto s_lif = spikeforge::spiking_activation_over_time(drive, 15, true, lif1);
    auto s_if = spikeforge::spiking_activation_over_time(drive, 15, true, if_neuron());
    for (std::int64_t i = 0; i < s_lif.size(); ++i) {
        CHECK(s_lif.data()[i] == s_if.data()[i]);
    }
}

TEST_CASE("binarity: every spike value is exactly 0 or 1") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    auto drive = Tensor::zeros({40, 9});
    for (auto& v : drive.data()) v = dist(rng);
    auto spikes = spikeforge::spiking_activation_over_time(drive, 8, true, lif_neuron(0.7));
    for (double v : spikes.data()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("hard-zero reset leaves fired membranes at exactly 0") {
    auto v = Tensor::from_data({3}, {0.9, 0.2, 1.5});
    auto in = Tensor::from_data({3}, {0.5, 0.1, 0.0});
    auto [s, v2] = spikeforge::spike_step(v, in, if_neuron());
    CHECK(s.data()[0] == 1.0);
    CHECK(v2.data()[0] == 0.0);
    CHECK(s.data()[1] == 0.0);
    CHECK(v2.data()[1] == doctest::Approx(0.3));
    CHECK(s.data()[2] == 1.0);
    CHECK(v2.data()[2] == 0.0);
}

TEST_CASE("conservation: soft-subtract IF emits floor(c*T/theta) +- 1 spikes") {
    const auto cfg = if_neuron(1.0, NeuronConfig::Reset::SoftSubtract);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> dist(0.05, 0.95);
    for (int trial = 0; trial < 30; ++trial) {
        const double c = dist(rng);
        const std::int64_t T = 1 + static_cast<std::int64_t>(rng() % 20);
        std::vector<double> drive(static_cast<std::size_t>(T), c);
        const auto train = scalar_spike_train(drive, cfg);
        std::int64_t total = 0;
        for (double s : train) total += static_cast<std::int64_t>(s);
        const std::int64_t expect = static_cast<std::int64_t>(
            std::floor(c * static_cast<double>(T) / cfg.threshold));
        CHECK(std::abs(total - expect) <= 1);
    }
}

TEST_CASE("single IF neuron net, drive 0.4, T=10 -> 4 spikes recorded (soft-subtract)") {
    NetworkSpec net;
    net.timesteps = 10;
    net.layers = {FlattenSpec{}, SpikingSpec{if_neuron(1.0, NeuronConfig::Reset::SoftSubtract)},
                  DenseSpec{1}};
    Network<double> model(net, {1, 1, 1}, 0);
    auto batch = Tensor::full({1, 1, 1, 1}, 0.4);
    auto fwd = model.forward_spiking(batch);
    REQUIRE(fwd.record.layers.size() == 1);
    CHECK(fwd.record.total_spikes() == 4);
    CHECK_FALSE(fwd.record.collapse);
}

TEST_CASE("unreachable threshold: zero logits, all-zero record, collapse flag") {
    NetworkSpec net;
    net.timesteps = 1;
    net.layers = {FlattenSpec{}, SpikingSpec{if_neuron(1e30)}, DenseSpec{3}};
    Network<double> model(net, {1, 2, 2}, 1);
    // Zero the readout bias contribution by zeroing all params; logits must
    // then be exactly zero when nothing fires.
    for (auto& p : model.parameters()) std::fill(p.data().begin(), p.data().end(), 0.0);
    auto batch = Tensor::full({2, 1, 2, 2}, 0.9);
    auto fwd = model.forward_spiking(batch);
    CHECK(fwd.record.total_spikes() == 0);
    CHECK(fwd.record.collapse);
    for (double v : fwd.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("MNIST student shapes: m=2 spiking layers of 9216 and 4096 neurons") {
    Network<double> model(mnist_student(), {1, 28, 28}, 3);
    auto layout = model.spiking_layer_layout();
    REQUIRE(layout.size() == 2);
    CHECK(layout[0].neuron_count == 16 * 24 * 24);
    CHECK(layout[1].neuron_count == 64 * 8 * 8);
    CHECK(model.total_spiking_neurons() == 16 * 24 * 24 + 64 * 8 * 8);
    CHECK(model.classes() == 10);

    auto batch = Tensor::full({2, 1, 28, 28}, 0.5);
    auto fwd = model.forward_spiking(batch);
    CHECK(fwd.logits.shape() == Shape{2, 10});
    REQUIRE(fwd.record.layers.size() == 2);
    CHECK(fwd.record.layers[0].neuron_count == 9216);
    CHECK(fwd.record.layers[1].neuron_count == 4096);
    CHECK(fwd.record.timesteps == 10);
    REQUIRE(fwd.layer_spikes.size() == 2);
    CHECK(fwd.layer_spikes[0].shape() == Shape{20, 16, 24, 24});
    CHECK(fwd.layer_spikes[1].shape() == Shape{20, 64, 8, 8});
}

TEST_CASE("spiking spec validation") {
    NetworkSpec no_spike;
    no_spike.timesteps = 4;
    no_spike.layers = {FlattenSpec{}, DenseSpec{3}};
    CHECK_THROWS_AS(no_spike.validate_spiking(), std::invalid_argument);

    NetworkSpec ends_spiking;
    ends_spiking.timesteps = 4;
    ends_spiking.layers = {FlattenSpec{}, DenseSpec{3}, SpikingSpec{if_neuron()}};
    CHECK_THROWS_AS(ends_spiking.validate_spiking(), std::invalid_argument);

    NetworkSpec teacher_with_spikes;
    teacher_with_spikes.layers = {FlattenSpec{}, SpikingSpec{if_neuron()}, DenseSpec{3}};
    CHECK_THROWS_AS(teacher_with_spikes.validate_teacher(), std::invalid_argument);
}

TEST_CASE("forward_teacher") {
    SUBCASE("dense identity maps input to logits") {
        NetworkSpec net;
        net.layers = {FlattenSpec{}, DenseSpec{2}};
        Network<double> model(net, {1, 1, 2}, 0);
        auto params = model.named_parameters();
        // weight [2,2] identity, bias [1,-1]
        auto w = params[0].second;
        std::copy_n(std::vector<double>{1, 0, 0, 1}.begin(), 4, w.data().begin());
        auto b = params[1].second;
        std::copy_n(std::vector<double>{1, -1}.begin(), 2, b.data().begin());
        auto out = model.forward_teacher(Tensor::from_data({1, 1, 1, 2}, {0, 0}));
        CHECK(out.data()[0] == doctest::Approx(1.0));
        CHECK(out.data()[1] == doctest::Approx(-1.0));
    }
    SUBCASE("repeat-call purity") {
        NetworkSpec net;
        net.layers = {Conv2dSpec{4, 3, 1}, ReluSpec{}, AvgPool2x2Spec{}, FlattenSpec{},
                      DenseSpec{5}};
        Network<double> model(net, {1, 6, 6}, 7);
        std::mt19937_64 rng(29);
        std::uniform_real_distribution<double> dist(0, 1);
        auto batch = Tensor::zeros({3, 1, 6, 6});
        for (auto& v : batch.data()) v = dist(rng);
        auto a = model.forward_teacher(batch);
        auto b = model.forward_teacher(batch);
        for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
    }
    SUBCASE("spiking layer rejected") {
        NetworkSpec net;
        net.timesteps = 2;
        net.layers = {FlattenSpec{}, SpikingSpec{if_neuron()}, DenseSpec{2}};
        Network<double> model(net, {1, 1, 4}, 0);
        CHECK_THROWS_AS(model.forward_teacher(Tensor::zeros({1, 1, 1, 4})),
                        std::invalid_argument);
    }
}

TEST_CASE("gradient flow and the collapse boundary") {
    // With spikes present, some upstream parameter gets nonzero gradient;
    // with an unreachable threshold and hard reset, the collapse flag is
    // raised exactly when the record is all-zero.
    NetworkSpec net;
    net.timesteps = 6;
    net.layers = {Conv2dSpec{2, 3, 0}, SpikingSpec{if_neuron(0.5)}, FlattenSpec{}, DenseSpec{2}};
    Network<double> model(net, {1, 5, 5}, 11);
    Graph<double> g;
    RecordScope<double> scope(g);
    auto batch = Tensor::full({2, 1, 5, 5}, 0.8);
    auto fwd = model.forward_spiking(batch);
    REQUIRE(fwd.record.total_spikes() > 0);
    CHECK_FALSE(fwd.record.collapse);
    auto loss = spikeforge::mean(spikeforge::square(fwd.logits));
    g.backward(loss);
    double conv_grad_norm = 0;
    for (double v : model.parameters()[0].grad()) conv_grad_norm += std::abs(v);
    CHECK(conv_grad_norm > 0.0);
}

TEST_CASE("weight container round trip, including f32<->f64 conversion") {
    Network<double> model(mnist_student(2), {1, 28, 28}, 5);
    const std::string path = "/tmp/spikeforge_test_weights.spkf";
    spikeforge::save_network_weights(path, model);

    Network<double> other(mnist_student(2), {1, 28, 28}, 99);
    spikeforge::load_network_weights(path, other);
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        auto a = model.parameters()[i].data();
        auto b = other.parameters()[i].data();
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }

    // Cross-precision load converts values.
    Network<float> model32(mnist_student(2), {1, 28, 28}, 123);
    spikeforge::load_network_weights(path, model32);
    auto d = model.parameters()[0].data();
    auto f = model32.parameters()[0].data();
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(f[j] == doctest::Approx(static_cast<float>(d[j])));
    }

    SUBCASE("bad magic rejected") {
        const std::string bad = "/tmp/spikeforge_bad_weights.spkf";
        std::ofstream os(bad, std::ios::binary);
        os << "NOPE00000000";
        os.close();
        Network<double> victim(mnist_student(2), {1, 28, 28}, 0);
        CHECK_THROWS_AS(spikeforge::load_network_weights(bad, victim), std::runtime_error);
    }
}
