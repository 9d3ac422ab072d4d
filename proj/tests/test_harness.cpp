#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "spikeforge/harness.hpp"

using spikeforge::DatasetConfig;
using spikeforge::ExperimentConfig;
using spikeforge::KDConfig;
using spikeforge::NetworkSpec;
using spikeforge::RegConfig;
namespace fs = std::filesystem;

namespace {

int g_dir_counter = 0;

std::string fresh_out_dir() {
    const fs::path dir =
        fs::temp_directory_path() / ("spikeforge_harness_" + std::to_string(g_dir_counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

NetworkSpec blob_student(std::int64_t timesteps = 4) {
    spikeforge::NeuronConfig neuron;  // IF, theta 1, hard reset
    NetworkSpec net;
    net.timesteps = timesteps;
    net.layers = {spikeforge::FlattenSpec{}, spikeforge::DenseSpec{24},
                  spikeforge::SpikingSpec{neuron}, spikeforge::DenseSpec{2}};
    return net;
}

NetworkSpec blob_teacher() {
    NetworkSpec net;
    net.layers = {spikeforge::FlattenSpec{}, spikeforge::DenseSpec{16}, spikeforge::ReluSpec{},
                  spikeforge::DenseSpec{2}};
    return net;
}

ExperimentConfig blob_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetConfig::Kind::SynthBlobs;
    cfg.dataset.classes = 2;
    cfg.dataset.per_class = 120;
    cfg.dataset.test_per_class = 40;
    cfg.dataset.dims = 8;
    cfg.dataset.blob_seed = 5;
    cfg.student = blob_student();
    cfg.optimizer.kind = spikeforge::OptimizerConfig::Kind::Adam;
    cfg.optimizer.learning_rate = 5e-3;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.seeds = {0, 1};
    cfg.out_dir = out_dir;
    cfg.threads = 1;
    return cfg;
}

}  // namespace

TEST_CASE("experiment config JSON round trip") {
    auto cfg = blob_config("/tmp/rt");
    cfg.teacher = blob_teacher();
    cfg.kd.kind = KDConfig::Kind::SoftTargetsHet;
    cfg.kd.tau_t = 8;
    cfg.kd.tau_s = 1;
    cfg.reg.target = RegConfig::Target::Logits;
    cfg.reg.norm = RegConfig::Norm::L2Sq;
    cfg.reg.lambda = 0.25;
    cfg.sweep.lambda = {0.1, 0.001};
    cfg.optimizer.scheduler.kind = spikeforge::SchedulerConfig::Kind::Cosine;
    cfg.optimizer.scheduler.t_max = 50;
    cfg.precision = ExperimentConfig::Precision::F64;

    auto back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.config_hash() == cfg.config_hash());
    CHECK(back.config_id() == cfg.config_id());
    CHECK(back.kd.kind == KDConfig::Kind::SoftTargetsHet);
    CHECK(back.reg.lambda == 0.25);
    CHECK(back.sweep.lambda == std::vector<double>{0.1, 0.001});
    CHECK(back.student.timesteps == 4);
    CHECK(back.precision == ExperimentConfig::Precision::F64);
}

TEST_CASE("config ids are stable and readable") {
    auto cfg = blob_config("/tmp/x");
    const std::string base_id = cfg.config_id();
    CHECK(base_id.find("base-") == 0);
    cfg.reg.lambda = 10.0;
    const std::string reg_id = cfg.config_id();
    CHECK(reg_id.find("l1act-lam10-") == 0);
    CHECK(reg_id != base_id);
    cfg.kd.kind = KDConfig::Kind::SoftTargetsHet;
    cfg.kd.tau_s = 1;
    cfg.kd.tau_t = 8;
    cfg.teacher = blob_teacher();
    CHECK(cfg.config_id().find("sthet-ts1-tt8-") == 0);
    // Seeds and out_dir are execution details, not identity.
    auto cfg2 = cfg;
    cfg2.seeds = {42};
    cfg2.out_dir = "/somewhere/else";
    CHECK(cfg2.config_hash() == cfg.config_hash());
}

TEST_CASE("environment overrides") {
    auto cfg = blob_config("/tmp/env");
    setenv("SPIKEFORGE_THREADS", "1", 1);
    setenv("SPIKEFORGE_SEEDS", "3,4", 1);
    setenv("SPIKEFORGE_EPOCHS", "7", 1);
    spikeforge::apply_env_overrides(cfg);
    CHECK(cfg.threads == 1);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(cfg.epochs == 7);
    unsetenv("SPIKEFORGE_THREADS");
    unsetenv("SPIKEFORGE_SEEDS");
    unsetenv("SPIKEFORGE_EPOCHS");
}

TEST_CASE("config validation catches the KD-without-teacher case") {
    auto cfg = blob_config("/tmp/v");
    cfg.kd.kind = KDConfig::Kind::SoftTargets;
    cfg.kd.tau = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.teacher = blob_teacher();
    cfg.validate();
}

TEST_CASE("baseline training run: self-deltas zero, reports written, reproducible") {
    const std::string out = fresh_out_dir();
    auto cfg = blob_config(out);
    auto outcome = spikeforge::train_student(cfg);

    REQUIRE(outcome.per_seed.size() == 2);
    CHECK(outcome.averaged.seeds.size() == 2);
    CHECK(outcome.averaged.baseline_id == cfg.config_id());
    CHECK(outcome.averaged.delta_acc_r == 0.0);
    CHECK(outcome.averaged.delta_sr_r == 0.0);
    for (const auto& d : outcome.averaged.per_layer_deltas) CHECK(d.delta_sr == 0.0);
    // Learned something on separable blobs.
    CHECK(outcome.averaged.accuracy > 0.8);
    CHECK(outcome.averaged.stats.tot_neurons == 24);
    CHECK(outcome.averaged.stats.spikerate >= 0.0);
    CHECK(outcome.averaged.stats.spikerate <= 4.0);

    CHECK(fs::exists(fs::path(out) / "reports" / (cfg.config_id() + ".mean.json")));
    CHECK(fs::exists(fs::path(out) / "reports" / (cfg.config_id() + ".seed0.json")));
    CHECK(fs::exists(fs::path(out) / "reports" / (cfg.config_id() + ".seed1.json")));

    SUBCASE("same config and seed reproduce accuracy and spike counts exactly") {
        auto again = spikeforge::train_student(cfg);
        CHECK(again.per_seed[0].accuracy == outcome.per_seed[0].accuracy);
        CHECK(again.per_seed[0].stats.sc_inf == outcome.per_seed[0].stats.sc_inf);
        CHECK(again.per_seed[1].accuracy == outcome.per_seed[1].accuracy);
    }
}

TEST_CASE("teacher training: determinism and the epochs=0 checkpoint") {
    const std::string out = fresh_out_dir();
    auto cfg = blob_config(out);
    cfg.teacher = blob_teacher();
    cfg.epochs = 4;
    auto report = spikeforge::train_teacher(cfg);
    CHECK(report.accuracy > 0.9);
    const std::string ckpt = spikeforge::teacher_checkpoint_path(cfg);
    REQUIRE(fs::exists(ckpt));

    SUBCASE("fixed seed -> identical checkpoint bytes across runs") {
        std::ifstream a(ckpt, std::ios::binary);
        std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
        spikeforge::train_teacher(cfg);
        std::ifstream b(ckpt, std::ios::binary);
        std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
        CHECK(bytes_a == bytes_b);
    }
    SUBCASE("epochs=0 keeps the untrained network") {
        auto cfg0 = cfg;
        cfg0.epochs = 0;
        auto r0 = spikeforge::train_teacher(cfg0);
        CHECK(r0.accuracy < 0.8);  // untrained two-class net far from trained quality
        CHECK(fs::exists(spikeforge::teacher_checkpoint_path(cfg0)));
    }
}

TEST_CASE("KD student consumes the teacher and reports against a stored baseline") {
    const std::string out = fresh_out_dir();
    auto base_cfg = blob_config(out);
    auto base = spikeforge::train_student(base_cfg);

    auto kd_cfg = blob_config(out);
    kd_cfg.teacher = blob_teacher();
    kd_cfg.kd.kind = KDConfig::Kind::SoftTargetsHet;
    kd_cfg.kd.alpha = 0.1;
    kd_cfg.kd.tau_s = 1;
    kd_cfg.kd.tau_t = 8;
    kd_cfg.baseline_id = base_cfg.config_id();
    auto kd = spikeforge::train_student(kd_cfg);
    CHECK(kd.averaged.baseline_id == base_cfg.config_id());
    // Deltas are defined against the baseline numbers.
    CHECK(kd.averaged.delta_acc_r ==
          doctest::Approx(spikeforge::delta_acc(kd.averaged.accuracy, base.averaged.accuracy)));

    SUBCASE("unresolved baseline id is an error") {
        auto broken = kd_cfg;
        broken.baseline_id = "nonexistent-00000000";
        CHECK_THROWS_AS(spikeforge::train_student(broken), std::runtime_error);
    }
}

TEST_CASE("zero-spike collapse run carries the flag and chance-level accuracy") {
    const std::string out = fresh_out_dir();
    auto cfg = blob_config(out);
    cfg.reg.target = RegConfig::Target::Activations;
    cfg.reg.norm = RegConfig::Norm::L1;
    cfg.reg.lambda = 1e6;
    cfg.optimizer.learning_rate = 0.02;
    cfg.epochs = 12;
    cfg.seeds = {0};
    auto outcome = spikeforge::train_student(cfg);
    CHECK(outcome.averaged.collapse);
    CHECK(outcome.averaged.stats.spikerate == 0.0);
    CHECK(outcome.averaged.accuracy == doctest::Approx(0.5).epsilon(0.31));
}

TEST_CASE("sweep: grid expansion, csv shape, determinism of re-emission") {
    const std::string out = fresh_out_dir();
    auto cfg = blob_config(out);
    cfg.reg.target = RegConfig::Target::Activations;
    cfg.reg.norm = RegConfig::Norm::L1;
    cfg.sweep.lambda = {0.5, 0.005};  // intentionally unsorted
    auto result = spikeforge::run_sweep(cfg);
    CHECK(result.failures.empty());
    // 2 cells x (2 seeds + 1 mean)
    CHECK(result.reports.size() == 6);

    auto read = [&](const std::string& name) {
        std::ifstream is(fs::path(out) / name);
        return std::string((std::istreambuf_iterator<char>(is)), {});
    };
    const std::string runs_csv = read("runs.csv");
    CHECK(runs_csv.find("config_id,seed,") == 0);
    // Two per-seed rows plus one mean row per cell.
    std::size_t mean_rows = 0, pos = 0;
    while ((pos = runs_csv.find(",mean,", pos)) != std::string::npos) {
        ++mean_rows;
        pos += 1;
    }
    CHECK(mean_rows == 2);
    const std::string per_layer = read("per_layer.csv");
    CHECK(per_layer.find("config_id,seed,layer_id,n_j,spikerate,delta_vs_baseline") == 0);
    const std::string summary = read("summary.json");
    CHECK(summary.find("pareto") != std::string::npos);

    SUBCASE("re-emitting the same corpus is byte-identical") {
        spikeforge::emit_reports(result.reports, out);
        CHECK(read("runs.csv") == runs_csv);
        CHECK(read("per_layer.csv") == per_layer);
        CHECK(read("summary.json") == summary);
    }
    SUBCASE("report corpus reloads for the report command") {
        auto corpus = spikeforge::load_report_corpus(out);
        CHECK(corpus.size() == 6);
        const std::string out2 = fresh_out_dir();
        spikeforge::emit_reports(corpus, out2);
        std::ifstream is(fs::path(out2) / "runs.csv");
        std::string again((std::istreambuf_iterator<char>(is)), {});
        CHECK(again == runs_csv);
    }
}

TEST_CASE("one-point grid equals a single train_student run") {
    const std::string out_a = fresh_out_dir();
    auto cfg = blob_config(out_a);
    cfg.seeds = {0};
    auto single = spikeforge::train_student(cfg);

    const std::string out_b = fresh_out_dir();
    auto sweep_cfg = blob_config(out_b);
    sweep_cfg.seeds = {0};
    auto swept = spikeforge::run_sweep(sweep_cfg);
    REQUIRE(swept.failures.empty());
    REQUIRE(swept.reports.size() == 2);  // seed row + mean row
    CHECK(swept.reports[0].accuracy == single.per_seed[0].accuracy);
    CHECK(swept.reports[0].stats.sc_inf == single.per_seed[0].stats.sc_inf);
}

TEST_CASE("sweep records cell failures and keeps going") {
    const std::string out = fresh_out_dir();
    auto cfg = blob_config(out);
    cfg.baseline_id = "missing-baseline-0000";  // every cell fails to resolve it
    cfg.sweep.lambda = {0.1, 0.2};
    cfg.reg.norm = RegConfig::Norm::L1;
    auto result = spikeforge::run_sweep(cfg);
    CHECK(result.reports.empty());
    CHECK(result.failures.size() == 2);
}

TEST_CASE("emit_reports rejects an empty corpus") {
    CHECK_THROWS_AS(spikeforge::emit_reports({}, fresh_out_dir()), std::invalid_argument);
}
