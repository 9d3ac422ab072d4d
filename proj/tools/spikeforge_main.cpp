#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "spikeforge/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    long long seed = -1;
    std::string out;
    int threads = -1;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config JSON");
    if (config_required) opt->required();
    cmd->add_option("--seed", flags.seed, "override: train a single seed");
    cmd->add_option("--out", flags.out, "override: output directory");
    cmd->add_option("--threads", flags.threads, "override: worker threads (0 = auto)");
    cmd->add_option("--precision", flags.precision, "override: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
}

spikeforge::ExperimentConfig load_config(const CommonFlags& flags) {
    auto cfg = spikeforge::ExperimentConfig::from_file(flags.config_path);
    spikeforge::apply_env_overrides(cfg);
    if (flags.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(flags.seed)};
    if (!flags.out.empty()) cfg.out_dir = flags.out;
    if (flags.threads >= 0) cfg.threads = flags.threads;
    if (flags.precision == "f32") cfg.precision = spikeforge::ExperimentConfig::Precision::F32;
    if (flags.precision == "f64") cfg.precision = spikeforge::ExperimentConfig::Precision::F64;
    return cfg;
}

void print_report_line(const spikeforge::MetricsReport& r) {
    std::printf("%s seed=%s acc=%.4f sc_inf=%.1f sr=%.4f dacc=%+.4f dsr=%+.4f%s\n",
                r.config_id.c_str(), r.seed_label().c_str(), r.accuracy, r.stats.sc_inf,
                r.stats.spikerate, r.delta_acc_r, r.delta_sr_r, r.collapse ? " [collapse]" : "");
}

int fail(const std::string& type, const std::string& message) {
    nlohmann::json err;
    err["error"] = {{"type", type}, {"message", message}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spikeforge: spiking-network training and sparsity experiments"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string report_in;

    auto* teacher_cmd = app.add_subcommand("train-teacher", "train the teacher network");
    add_common(teacher_cmd, flags);
    auto* student_cmd = app.add_subcommand("train-student", "train the student over all seeds");
    add_common(student_cmd, flags);
    auto* sweep_cmd = app.add_subcommand("sweep", "train every grid cell and consolidate reports");
    add_common(sweep_cmd, flags);
    auto* report_cmd = app.add_subcommand("report", "re-emit CSV/JSON reports from saved runs");
    add_common(report_cmd, flags, false);
    report_cmd->add_option("--runs", report_in, "directory holding reports/ (defaults to --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        return fail("usage", e.what());
    }

    try {
        if (teacher_cmd->parsed()) {
            auto cfg = load_config(flags);
            auto report = spikeforge::train_teacher(cfg);
            std::printf("teacher %s best test accuracy %.4f -> %s\n", report.config_id.c_str(),
                        report.accuracy, spikeforge::teacher_checkpoint_path(cfg).c_str());
        } else if (student_cmd->parsed()) {
            auto cfg = load_config(flags);
            auto outcome = spikeforge::train_student(cfg);
            for (const auto& r : outcome.per_seed) print_report_line(r);
            print_report_line(outcome.averaged);
        } else if (sweep_cmd->parsed()) {
            auto cfg = load_config(flags);
            auto result = spikeforge::run_sweep(cfg);
            for (const auto& r : result.reports) {
                if (r.is_mean() || !r.per_seed.empty()) print_report_line(r);
            }
            if (!result.failures.empty()) {
                for (const auto& f : result.failures) {
                    std::fprintf(stderr, "cell %s failed: %s\n", f.config_id.c_str(),
                                 f.message.c_str());
                }
                return fail("sweep", std::to_string(result.failures.size()) + " cell(s) failed");
            }
            std::printf("sweep reports written to %s\n", cfg.out_dir.c_str());
        } else if (report_cmd->parsed()) {
            std::string in = report_in;
            if (in.empty() && !flags.config_path.empty()) {
                in = load_config(flags).out_dir;
            }
            if (in.empty()) in = flags.out;
            if (in.empty()) return fail("usage", "report: need --runs, --config or --out");
            auto corpus = spikeforge::load_report_corpus(in);
            const std::string out = flags.out.empty() ? in : flags.out;
            spikeforge::emit_reports(corpus, out);
            std::printf("emitted %zu report rows to %s\n", corpus.size(), out.c_str());
        }
    } catch (const std::invalid_argument& e) {
        return fail("invalid_argument", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
    return 0;
}
