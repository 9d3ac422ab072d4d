#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "spikeforge/metrics.hpp"
#include "spikeforge/network.hpp"

using spikeforge::MetricsReport;
using spikeforge::SpikeRecord;
using spikeforge::SpikeStats;

namespace {

SpikeRecord make_record(std::int64_t samples, std::int64_t timesteps,
                        std::vector<std::pair<std::int64_t, std::vector<std::int64_t>>> layers) {
    SpikeRecord rec;
    rec.samples = samples;
    rec.timesteps = timesteps;
    std::int64_t id = 0;
    for (auto& [neurons, counts] : layers) {
        SpikeRecord::Layer l;
        l.layer_id = id++;
        l.neuron_count = neurons;
        l.spikes_per_step = counts;
        rec.layers.push_back(std::move(l));
    }
    rec.collapse = rec.total_spikes() == 0;
    return rec;
}

MetricsReport seed_report(std::uint64_t seed, double acc, double sr) {
    MetricsReport r;
    r.config_id = "cfg-x";
    r.config_hash = 42;
    r.seeds = {seed};
    r.accuracy = acc;
    r.stats.sc_inf = sr * 100.0;
    r.stats.tot_neurons = 100;
    r.stats.spikerate = sr;
    r.stats.per_layer.push_back({0, 100, sr * 100.0, sr});
    r.per_layer_deltas.push_back({0, 0.0});
    return r;
}

}  // namespace

TEST_CASE("spikerate examples") {
    SUBCASE("silent network") {
        auto rec = make_record(4, 3, {{50, {0, 0, 0}}});
        auto stats = spikeforge::spikerate(rec, 50);
        CHECK(stats.sc_inf == 0.0);
        CHECK(stats.spikerate == 0.0);
    }
    SUBCASE("100 spikes per sample over 50 neurons -> Sr = 2") {
        auto rec = make_record(2, 4, {{50, {50, 50, 50, 50}}});  // 200 total over 2 samples
        auto stats = spikeforge::spikerate(rec, 50);
        CHECK(stats.sc_inf == doctest::Approx(100.0));
        CHECK(stats.spikerate == doctest::Approx(2.0));
    }
    SUBCASE("Tot_neurons mismatch rejected") {
        auto rec = make_record(1, 2, {{10, {1, 2}}, {20, {0, 0}}});
        CHECK_THROWS_AS(spikeforge::spikerate(rec, 25), std::invalid_argument);
        auto stats = spikeforge::spikerate(rec, 30);
        CHECK(stats.per_layer.size() == 2);
    }
    SUBCASE("Sr bounds hold on random records") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            const std::int64_t T = 1 + static_cast<std::int64_t>(rng() % 16);
            const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 40);
            const std::int64_t samples = 1 + static_cast<std::int64_t>(rng() % 8);
            std::vector<std::int64_t> counts(static_cast<std::size_t>(T));
            for (auto& c : counts) {
                c = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(samples * n + 1));
            }
            auto rec = make_record(samples, T, {{n, counts}});
            auto stats = spikeforge::spikerate(rec, n);
            CHECK(stats.spikerate >= 0.0);
            CHECK(stats.spikerate <= static_cast<double>(T));
        }
    }
}

TEST_CASE("delta_acc examples") {
    CHECK(spikeforge::delta_acc(0.9, 0.9) == 0.0);
    CHECK(spikeforge::delta_acc(0.992, 0.984) ==
          doctest::Approx(0.0081300813008130081).epsilon(1e-12));
    // Paper row: 86.5% model vs 86.64% baseline is about -0.17%.
    CHECK(spikeforge::delta_acc(0.865, 0.8664) == doctest::Approx(-0.0016628).epsilon(1e-3));
    CHECK(spikeforge::delta_acc(0.865, 0.8664) * 100.0 == doctest::Approx(-0.17).epsilon(0.03));
    CHECK_THROWS_AS(spikeforge::delta_acc(0.5, 0.0), std::invalid_argument);
}

TEST_CASE("delta_spikerate examples") {
    CHECK(spikeforge::delta_spikerate(1.0, 2.0) == doctest::Approx(-0.5));
    CHECK(spikeforge::delta_spikerate(0.0, 2.0) == doctest::Approx(-1.0));
    // Paper row: 5k spikes vs the 41201-spike baseline is -87.81%.
    const double tot = 13312.0;
    CHECK(spikeforge::delta_spikerate(5022.0 / tot, 41201.0 / tot) ==
          doctest::Approx(-0.87810975461760637).epsilon(1e-10));
    CHECK(spikeforge::delta_spikerate(5022.0 / tot, 41201.0 / tot) * 100.0 ==
          doctest::Approx(-87.81).epsilon(1e-4));
    CHECK_THROWS_AS(spikeforge::delta_spikerate(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("delta antisymmetry up to the denominator change: delta(a,b) = -delta(b,a)*a/b") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(0.05, 3.0);
    for (int i = 0; i < 25; ++i) {
        const double a = dist(rng), b = dist(rng);
        CHECK(spikeforge::delta_spikerate(a, b) ==
              doctest::Approx(-spikeforge::delta_spikerate(b, a) * a / b).epsilon(1e-10));
        CHECK(spikeforge::delta_acc(a, b) ==
              doctest::Approx(-spikeforge::delta_acc(b, a) * a / b).epsilon(1e-10));
    }
}

TEST_CASE("per-layer report") {
    auto base_rec = make_record(1, 2, {{10, {5, 5}}, {20, {8, 8}}});
    auto base = spikeforge::spikerate(base_rec, 30);
    SUBCASE("model == baseline -> all-zero deltas") {
        auto deltas = spikeforge::per_layer_report(base, base);
        REQUIRE(deltas.size() == 2);
        CHECK(deltas[0].delta_sr == 0.0);
        CHECK(deltas[1].delta_sr == 0.0);
    }
    SUBCASE("halving only layer 2") {
        auto model_rec = make_record(1, 2, {{10, {5, 5}}, {20, {4, 4}}});
        auto model = spikeforge::spikerate(model_rec, 30);
        auto deltas = spikeforge::per_layer_report(model, base);
        CHECK(deltas[0].delta_sr == doctest::Approx(0.0));
        CHECK(deltas[1].delta_sr == doctest::Approx(-0.5));
    }
    SUBCASE("topology mismatch rejected") {
        auto other_rec = make_record(1, 2, {{10, {5, 5}}});
        auto other = spikeforge::spikerate(other_rec, 10);
        CHECK_THROWS_AS(spikeforge::per_layer_report(other, base), std::invalid_argument);
    }
}

TEST_CASE("average_runs") {
    SUBCASE("single report averages to itself") {
        auto r = seed_report(0, 0.91, 1.5);
        auto avg = spikeforge::average_runs(std::vector<MetricsReport>{r});
        CHECK(avg.accuracy == doctest::Approx(0.91));
        CHECK(avg.stats.spikerate == doctest::Approx(1.5));
        CHECK(avg.per_seed.size() == 1);
    }
    SUBCASE("accuracies {0.9, 0.92, 0.94} -> 0.92 and spikerates {1,2,3} -> 2") {
        std::vector<MetricsReport> runs{seed_report(0, 0.90, 1.0), seed_report(1, 0.92, 2.0),
                                        seed_report(2, 0.94, 3.0)};
        auto avg = spikeforge::average_runs(runs);
        CHECK(avg.accuracy == doctest::Approx(0.92));
        CHECK(avg.stats.spikerate == doctest::Approx(2.0));
        CHECK(avg.seeds.size() == 3);
        CHECK(avg.is_mean());
        CHECK(avg.seed_label() == "mean");
        CHECK(avg.per_seed.size() == 3);
    }
    SUBCASE("config mismatch rejected") {
        auto a = seed_report(0, 0.9, 1.0);
        auto b = seed_report(1, 0.9, 1.0);
        b.config_id = "other";
        CHECK_THROWS_AS(spikeforge::average_runs(std::vector<MetricsReport>{a, b}),
                        std::invalid_argument);
    }
    SUBCASE("duplicate seeds rejected") {
        auto a = seed_report(0, 0.9, 1.0);
        auto b = seed_report(0, 0.92, 1.2);
        CHECK_THROWS_AS(spikeforge::average_runs(std::vector<MetricsReport>{a, b}),
                        std::invalid_argument);
    }
}

TEST_CASE("report JSON round trip") {
    auto r = seed_report(7, 0.935, 0.8);
    r.baseline_id = "base-12345678";
    r.delta_acc_r = -0.01;
    r.delta_sr_r = -0.6;
    r.collapse = true;
    auto j = r.to_json();
    CHECK(j.at("seed") == "7");
    CHECK(j.contains("config_hash"));
    CHECK(j.contains("sc_inf"));
    CHECK(j.contains("tot_neurons"));
    CHECK(j.contains("spikerate"));
    CHECK(j.contains("per_layer"));
    auto back = MetricsReport::from_json(j);
    CHECK(back.config_id == r.config_id);
    CHECK(back.accuracy == r.accuracy);
    CHECK(back.stats.spikerate == r.stats.spikerate);
    CHECK(back.collapse == r.collapse);
    CHECK(back.delta_sr_r == r.delta_sr_r);
    CHECK(back.stats.per_layer.size() == 1);
}

TEST_CASE("CSV schema") {
    CHECK(spikeforge::per_layer_csv_header() ==
          "config_id,seed,layer_id,n_j,spikerate,delta_vs_baseline");
    auto r = seed_report(3, 0.9, 1.0);
    const auto row = spikeforge::runs_csv_row(r);
    CHECK(row.find("cfg-x,3,0.9,") == 0);
    auto rows = spikeforge::per_layer_csv_rows(r);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].find("cfg-x,3,0,100,") == 0);
}
