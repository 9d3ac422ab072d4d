#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikeforge/data.hpp"
#include "spikeforge/distill.hpp"
#include "spikeforge/metrics.hpp"
#include "spikeforge/network.hpp"
#include "spikeforge/optim.hpp"
#include "spikeforge/regularize.hpp"

#include "json.hpp"

namespace spikeforge {

struct DatasetConfig {
    enum class Kind { MnistIdx, SynthBlobs };
    Kind kind = Kind::MnistIdx;
    std::string dir;                // directory with the four MNIST IDX files
    std::int64_t train_limit = 0;   // 0 = full split
    std::int64_t test_limit = 0;
    // SynthBlobs:
    int classes = 2;
    int per_class = 500;
    int test_per_class = 100;
    int dims = 16;
    double spread = 0.15;
    std::uint64_t blob_seed = 1234;
    void validate() const;
};

/// Explicit, finite sweep axes; which ones apply depends on the KD kind and
/// the regularization target of the base config.
struct SweepAxes {
    std::vector<double> tau;     // SoftTargets
    std::vector<double> tau_t;   // SoftTargetsHet
    std::vector<double> tau_s;   // SoftTargetsHet
    std::vector<double> alpha;   // Mse
    std::vector<double> lambda;  // regularization
    bool empty() const;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    NetworkSpec student;
    std::optional<NetworkSpec> teacher;
    std::string teacher_weights;  // optional checkpoint path
    OptimizerConfig optimizer;
    int epochs = 10;
    std::int64_t batch_size = 256;
    KDConfig kd;
    RegConfig reg;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string out_dir = "runs_out";
    std::string baseline_id;  // empty: the run is its own baseline
    SweepAxes sweep;
    enum class Precision { F32, F64 };
    Precision precision = Precision::F32;
    int threads = 0;  // 0 = hardware concurrency
    int eval_every = 1;
    std::string label;  // config_id prefix; derived from kd/reg when empty

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);

    /// Hash over the training-relevant fields (dataset, nets, optimizer,
    /// epochs, batch, kd, reg, precision); seeds and output locations are
    /// execution details and stay out.
    std::uint64_t config_hash() const;
    std::string config_id() const;  // "<label>-<hash8>"
};

/// Applies SPIKEFORGE_* environment overrides (THREADS, OUT, SEED, SEEDS,
/// PRECISION, EPOCHS, BATCH, MNIST_DIR) on top of a parsed config.
void apply_env_overrides(ExperimentConfig& cfg);

struct StudentOutcome {
    MetricsReport averaged;
    std::vector<MetricsReport> per_seed;
};

/// Cross-entropy training of the teacher spec; saves the best-test-accuracy
/// checkpoint under <out_dir>/weights/ and returns its report. Aborts with
/// an error if the loss diverges to a non-finite value.
MetricsReport train_teacher(const ExperimentConfig& cfg);

/// Path of the teacher checkpoint train_teacher would write.
std::string teacher_checkpoint_path(const ExperimentConfig& cfg);

/// Trains the student once per seed and returns per-seed plus averaged
/// reports (written under <out_dir>/reports/). KD configs resolve their
/// teacher from cfg.teacher_weights, a cached checkpoint, or by training
/// the teacher spec on the spot.
StudentOutcome train_student(const ExperimentConfig& cfg);

struct SweepResult {
    std::vector<MetricsReport> reports;  // per-seed and mean reports, all cells
    struct Failure {
        std::string config_id;
        std::string message;
    };
    std::vector<Failure> failures;
};

/// One train_student per grid cell; cell failures are recorded and the
/// sweep continues. Reports are consolidated via emit_reports.
SweepResult run_sweep(const ExperimentConfig& cfg);

/// Writes runs.csv, summary.json (with the Pareto set over maximizing
/// delta_acc_r while minimizing delta_sr_r) and per_layer.csv. Emission is
/// deterministic: the same corpus yields byte-identical files.
void emit_reports(const std::vector<MetricsReport>& corpus, const std::string& out_dir);

/// Loads every report JSON under <dir>/reports (used by the report command).
std::vector<MetricsReport> load_report_corpus(const std::string& dir);

// Evaluation helpers shared with the test suites.
template <typename T>
struct EvalResult {
    double accuracy = 0.0;
    SpikeRecord record;
};

template <typename T>
EvalResult<T> evaluate_student(const Network<T>& net, const Dataset<T>& test,
                               std::int64_t batch_size);

template <typename T>
double evaluate_teacher_accuracy(const Network<T>& net, const Dataset<T>& test,
                                 std::int64_t batch_size);

template <typename T>
struct LoadedData {
    Dataset<T> train;
    Dataset<T> test;
};

template <typename T>
LoadedData<T> load_dataset(const DatasetConfig& cfg);

#define SPIKEFORGE_HARNESS_EXTERN(T)                                                        \
    extern template EvalResult<T> evaluate_student<T>(const Network<T>&, const Dataset<T>&, \
                                                      std::int64_t);                        \
    extern template double evaluate_teacher_accuracy<T>(const Network<T>&, const Dataset<T>&, \
                                                        std::int64_t);                      \
    extern template LoadedData<T> load_dataset<T>(const DatasetConfig&);

SPIKEFORGE_HARNESS_EXTERN(float)
SPIKEFORGE_HARNESS_EXTERN(double)
#undef SPIKEFORGE_HARNESS_EXTERN

}  // namespace spikeforge
