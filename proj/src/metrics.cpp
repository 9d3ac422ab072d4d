#include "spikeforge/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace spikeforge {

namespace {

// Stable float formatting shared by CSV and JSON output paths so re-emission
// is byte-identical.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

SpikeStats spikerate(const SpikeRecord& record, std::int64_t tot_neurons) {
    if (record.samples <= 0) throw std::invalid_argument("spikerate: record holds no samples");
    std::int64_t layer_sum = 0;
    for (const auto& l : record.layers) layer_sum += l.neuron_count;
    if (layer_sum != tot_neurons) {
        throw std::invalid_argument("spikerate: Tot_neurons " + std::to_string(tot_neurons) +
                                    " does not match record layer sum " + std::to_string(layer_sum));
    }
    SpikeStats stats;
    stats.tot_neurons = tot_neurons;
    const double samples = static_cast<double>(record.samples);
    double total = 0;
    for (std::size_t j = 0; j < record.layers.size(); ++j) {
        const auto& l = record.layers[j];
        SpikeStats::LayerStat ls;
        ls.layer_id = l.layer_id;
        ls.neuron_count = l.neuron_count;
        ls.sc_inf = static_cast<double>(record.layer_total(j)) / samples;
        ls.spikerate = ls.sc_inf / static_cast<double>(l.neuron_count);
        total += ls.sc_inf;
        stats.per_layer.push_back(ls);
    }
    stats.sc_inf = total;
    stats.spikerate = stats.sc_inf / static_cast<double>(tot_neurons);
    return stats;
}

double delta_acc(double acc_model, double acc_baseline) {
    if (!(acc_baseline > 0.0)) throw std::invalid_argument("delta_acc: baseline must be > 0");
    return (acc_model - acc_baseline) / acc_baseline;
}

double delta_spikerate(double sr_model, double sr_baseline) {
    if (!(sr_baseline > 0.0)) throw std::invalid_argument("delta_spikerate: baseline must be > 0");
    return (sr_model - sr_baseline) / sr_baseline;
}

std::vector<PerLayerDelta> per_layer_report(const SpikeStats& model, const SpikeStats& baseline) {
    if (model.per_layer.size() != baseline.per_layer.size()) {
        throw std::invalid_argument("per_layer_report: layer topology mismatch");
    }
    std::vector<PerLayerDelta> out;
    for (std::size_t j = 0; j < model.per_layer.size(); ++j) {
        const auto& m = model.per_layer[j];
        const auto& b = baseline.per_layer[j];
        if (m.layer_id != b.layer_id || m.neuron_count != b.neuron_count) {
            throw std::invalid_argument("per_layer_report: layer topology mismatch at layer " +
                                        std::to_string(j));
        }
        out.push_back({m.layer_id, delta_spikerate(m.spikerate, b.spikerate)});
    }
    return out;
}

std::string MetricsReport::seed_label() const {
    if (is_mean()) return "mean";
    return seeds.empty() ? "" : std::to_string(seeds[0]);
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["config_id"] = config_id;
    j["config_hash"] = config_hash;
    j["baseline_id"] = baseline_id;
    j["seed"] = seed_label();
    j["seeds"] = seeds;
    j["accuracy"] = accuracy;
    j["sc_inf"] = stats.sc_inf;
    j["tot_neurons"] = stats.tot_neurons;
    j["spikerate"] = stats.spikerate;
    j["collapse"] = collapse;
    j["delta_acc_r"] = delta_acc_r;
    j["delta_sr_r"] = delta_sr_r;
    j["neuron_convention"] =
        "Tot_neurons counts each IF/LIF activation site once (T-independent); "
        "pooling/readout/teacher layers excluded";
    j["per_layer"] = nlohmann::json::array();
    for (std::size_t i = 0; i < stats.per_layer.size(); ++i) {
        const auto& l = stats.per_layer[i];
        nlohmann::json lj;
        lj["layer_id"] = l.layer_id;
        lj["neuron_count"] = l.neuron_count;
        lj["sc_inf"] = l.sc_inf;
        lj["spikerate"] = l.spikerate;
        lj["delta_sr_r"] =
            i < per_layer_deltas.size() ? per_layer_deltas[i].delta_sr : 0.0;
        j["per_layer"].push_back(lj);
    }
    if (!per_seed.empty()) {
        j["per_seed"] = nlohmann::json::array();
        for (const auto& r : per_seed) j["per_seed"].push_back(r.to_json());
    }
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.config_id = j.at("config_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.baseline_id = j.value("baseline_id", std::string{});
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.accuracy = j.at("accuracy").get<double>();
    r.stats.sc_inf = j.at("sc_inf").get<double>();
    r.stats.tot_neurons = j.at("tot_neurons").get<std::int64_t>();
    r.stats.spikerate = j.at("spikerate").get<double>();
    r.collapse = j.at("collapse").get<bool>();
    r.delta_acc_r = j.at("delta_acc_r").get<double>();
    r.delta_sr_r = j.at("delta_sr_r").get<double>();
    for (const auto& lj : j.at("per_layer")) {
        SpikeStats::LayerStat l;
        l.layer_id = lj.at("layer_id").get<std::int64_t>();
        l.neuron_count = lj.at("neuron_count").get<std::int64_t>();
        l.sc_inf = lj.at("sc_inf").get<double>();
        l.spikerate = lj.at("spikerate").get<double>();
        r.stats.per_layer.push_back(l);
        r.per_layer_deltas.push_back({l.layer_id, lj.value("delta_sr_r", 0.0)});
    }
    if (j.contains("per_seed")) {
        for (const auto& sj : j.at("per_seed")) r.per_seed.push_back(from_json(sj));
    }
    return r;
}

MetricsReport average_runs(std::span<const MetricsReport> runs) {
    if (runs.empty()) throw std::invalid_argument("average_runs: no reports");
    const auto& first = runs[0];
    MetricsReport avg;
    avg.config_id = first.config_id;
    avg.config_hash = first.config_hash;
    avg.baseline_id = first.baseline_id;
    avg.stats.tot_neurons = first.stats.tot_neurons;
    for (const auto& l : first.stats.per_layer) {
        avg.stats.per_layer.push_back({l.layer_id, l.neuron_count, 0.0, 0.0});
        avg.per_layer_deltas.push_back({l.layer_id, 0.0});
    }
    std::vector<std::uint64_t> seen;
    const double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
        if (r.config_id != first.config_id || r.config_hash != first.config_hash) {
            throw std::invalid_argument("average_runs: reports come from different configs");
        }
        if (r.stats.per_layer.size() != first.stats.per_layer.size() ||
            r.stats.tot_neurons != first.stats.tot_neurons) {
            throw std::invalid_argument("average_runs: reports have different layer layouts");
        }
        if (r.seeds.size() != 1) {
            throw std::invalid_argument("average_runs: inputs must be single-seed reports");
        }
        for (auto s : seen) {
            if (s == r.seeds[0]) {
                throw std::invalid_argument("average_runs: duplicate seed " + std::to_string(s));
            }
        }
        seen.push_back(r.seeds[0]);
        avg.seeds.push_back(r.seeds[0]);
        avg.accuracy += r.accuracy / n;
        avg.stats.sc_inf += r.stats.sc_inf / n;
        avg.stats.spikerate += r.stats.spikerate / n;
        avg.delta_acc_r += r.delta_acc_r / n;
        avg.delta_sr_r += r.delta_sr_r / n;
        avg.collapse = avg.collapse || r.collapse;
        for (std::size_t j = 0; j < r.stats.per_layer.size(); ++j) {
            avg.stats.per_layer[j].sc_inf += r.stats.per_layer[j].sc_inf / n;
            avg.stats.per_layer[j].spikerate += r.stats.per_layer[j].spikerate / n;
            avg.per_layer_deltas[j].delta_sr +=
                (j < r.per_layer_deltas.size() ? r.per_layer_deltas[j].delta_sr : 0.0) / n;
        }
        avg.per_seed.push_back(r);
    }
    return avg;
}

std::string runs_csv_header() {
    return "config_id,seed,accuracy,sc_inf,tot_neurons,spikerate,delta_acc_r,delta_sr_r,collapse,"
           "baseline_id";
}

std::string runs_csv_row(const MetricsReport& r) {
    std::string row = r.config_id;
    row += ',';
    row += r.seed_label();
    row += ',';
    row += fmt_double(r.accuracy);
    row += ',';
    row += fmt_double(r.stats.sc_inf);
    row += ',';
    row += std::to_string(r.stats.tot_neurons);
    row += ',';
    row += fmt_double(r.stats.spikerate);
    row += ',';
    row += fmt_double(r.delta_acc_r);
    row += ',';
    row += fmt_double(r.delta_sr_r);
    row += ',';
    row += r.collapse ? "1" : "0";
    row += ',';
    row += r.baseline_id;
    return row;
}

std::string per_layer_csv_header() {
    return "config_id,seed,layer_id,n_j,spikerate,delta_vs_baseline";
}

std::vector<std::string> per_layer_csv_rows(const MetricsReport& r) {
    std::vector<std::string> rows;
    for (std::size_t j = 0; j < r.stats.per_layer.size(); ++j) {
        const auto& l = r.stats.per_layer[j];
        std::string row = r.config_id;
        row += ',';
        row += r.seed_label();
        row += ',';
        row += std::to_string(l.layer_id);
        row += ',';
        row += std::to_string(l.neuron_count);
        row += ',';
        row += fmt_double(l.spikerate);
        row += ',';
        row += fmt_double(j < r.per_layer_deltas.size() ? r.per_layer_deltas[j].delta_sr : 0.0);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace spikeforge
