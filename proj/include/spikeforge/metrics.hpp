#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikeforge/network.hpp"

#include "json.hpp"

namespace spikeforge {

/// Spike accounting for one evaluated model.
///
/// Convention (also emitted in every report header): Tot_neurons counts
/// every IF/LIF activation site exactly once, independent of T; pooling,
/// readout and teacher layers are not counted. Sc_inf is the average number
/// of spikes for one inference over all T timesteps, so
/// Sr = Sc_inf / Tot_neurons always lies in [0, T].
struct SpikeStats {
    double sc_inf = 0.0;
    std::int64_t tot_neurons = 0;
    double spikerate = 0.0;
    struct LayerStat {
        std::int64_t layer_id = 0;
        std::int64_t neuron_count = 0;
        double sc_inf = 0.0;
        double spikerate = 0.0;  // layer-local: sc_inf / (n_j * 1)
    };
    std::vector<LayerStat> per_layer;
};

/// Builds SpikeStats from an aggregated record; tot_neurons must equal the
/// sum of recorded layer sizes.
SpikeStats spikerate(const SpikeRecord& record, std::int64_t tot_neurons);

/// (acc_model - acc_baseline) / acc_baseline; baseline must be positive.
double delta_acc(double acc_model, double acc_baseline);

/// (sr_model - sr_baseline) / sr_baseline; baseline must be positive.
double delta_spikerate(double sr_model, double sr_baseline);

struct PerLayerDelta {
    std::int64_t layer_id = 0;
    double delta_sr = 0.0;
};

/// Per-layer Spikerate deltas of a model against a baseline with identical
/// layer topology.
std::vector<PerLayerDelta> per_layer_report(const SpikeStats& model, const SpikeStats& baseline);

/// One training run (single seed) or the average of several (seed = "mean").
struct MetricsReport {
    std::string config_id;
    std::uint64_t config_hash = 0;
    std::string baseline_id;
    std::vector<std::uint64_t> seeds;  // one entry for single runs
    double accuracy = 0.0;
    SpikeStats stats;
    bool collapse = false;
    double delta_acc_r = 0.0;
    double delta_sr_r = 0.0;
    std::vector<PerLayerDelta> per_layer_deltas;
    std::vector<MetricsReport> per_seed;  // populated on averaged reports

    bool is_mean() const { return seeds.size() > 1; }
    std::string seed_label() const;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Field-wise arithmetic mean over runs of the same config with distinct
/// seeds; the inputs are retained under per_seed.
MetricsReport average_runs(std::span<const MetricsReport> runs);

/// Flat CSV schema shared by the harness: one row per (config, seed) plus
/// seed=mean rows.
std::string runs_csv_header();
std::string runs_csv_row(const MetricsReport& r);
std::string per_layer_csv_header();
std::vector<std::string> per_layer_csv_rows(const MetricsReport& r);

}  // namespace spikeforge
