#include "spikeforge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "spikeforge/weights_io.hpp"

namespace fs = std::filesystem;

namespace spikeforge {

// ---------------------------------------------------------------------------
// Config validation

void DatasetConfig::validate() const {
    if (kind == Kind::MnistIdx) {
        if (dir.empty()) throw std::invalid_argument("dataset: mnist-idx needs a directory");
    } else {
        if (classes < 2) throw std::invalid_argument("dataset: blobs need >= 2 classes");
        if (dims < 2) throw std::invalid_argument("dataset: blobs need >= 2 dims");
        if (per_class < 1 || test_per_class < 1) {
            throw std::invalid_argument("dataset: blobs need >= 1 sample per class");
        }
    }
    if (train_limit < 0 || test_limit < 0) {
        throw std::invalid_argument("dataset: limits must be >= 0");
    }
}

bool SweepAxes::empty() const {
    return tau.empty() && tau_t.empty() && tau_s.empty() && alpha.empty() && lambda.empty();
}

void ExperimentConfig::validate() const {
    dataset.validate();
    student.validate_spiking();
    if (teacher) teacher->validate_teacher();
    optimizer.validate();
    kd.validate();
    reg.validate();
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    if (kd.kind != KDConfig::Kind::None && !teacher && teacher_weights.empty()) {
        throw std::invalid_argument("config: KD requires a teacher spec or teacher weights");
    }
}

// ---------------------------------------------------------------------------
// JSON round trip

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

nlohmann::json neuron_to_json(const NeuronConfig& n) {
    nlohmann::json j;
    j["kind"] = n.kind == NeuronConfig::Kind::IF ? "IF" : "LIF";
    j["threshold"] = n.threshold;
    j["leak"] = n.leak;
    j["reset"] = n.reset == NeuronConfig::Reset::HardZero ? "hard-zero" : "soft-subtract";
    j["surrogate_slope"] = n.surrogate_slope;
    return j;
}

NeuronConfig neuron_from_json(const nlohmann::json& j, const NeuronConfig& base) {
    NeuronConfig n = base;
    if (j.contains("kind")) {
        const std::string k = j.at("kind").get<std::string>();
        if (k == "IF") {
            n.kind = NeuronConfig::Kind::IF;
            n.leak = 1.0;
        } else if (k == "LIF") {
            n.kind = NeuronConfig::Kind::LIF;
        } else {
            throw std::invalid_argument("config: unknown neuron kind '" + k + "'");
        }
    }
    if (j.contains("threshold")) n.threshold = j.at("threshold").get<double>();
    if (j.contains("leak")) n.leak = j.at("leak").get<double>();
    if (j.contains("reset")) {
        const std::string r = j.at("reset").get<std::string>();
        if (r == "hard-zero") {
            n.reset = NeuronConfig::Reset::HardZero;
        } else if (r == "soft-subtract") {
            n.reset = NeuronConfig::Reset::SoftSubtract;
        } else {
            throw std::invalid_argument("config: unknown reset '" + r + "'");
        }
    }
    if (j.contains("surrogate_slope")) n.surrogate_slope = j.at("surrogate_slope").get<double>();
    return n;
}

nlohmann::json layers_to_json(const NetworkSpec& net) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : net.layers) {
        nlohmann::json j;
        if (const auto* c = std::get_if<Conv2dSpec>(&l)) {
            j["type"] = "conv";
            j["filters"] = c->filters;
            j["kernel"] = c->kernel;
            j["padding"] = c->padding;
        } else if (std::holds_alternative<AvgPool2x2Spec>(l)) {
            j["type"] = "avgpool2x2";
        } else if (const auto* d = std::get_if<DenseSpec>(&l)) {
            j["type"] = "dense";
            j["units"] = d->units;
        } else if (const auto* s = std::get_if<SpikingSpec>(&l)) {
            j["type"] = "spiking";
            j["neuron"] = neuron_to_json(s->neuron);
        } else if (std::holds_alternative<ReluSpec>(l)) {
            j["type"] = "relu";
        } else {
            j["type"] = "flatten";
        }
        arr.push_back(j);
    }
    return arr;
}

nlohmann::json network_to_json(const NetworkSpec& net) {
    nlohmann::json j;
    j["layers"] = layers_to_json(net);
    j["timesteps"] = net.timesteps;
    return j;
}

NetworkSpec network_from_json(const nlohmann::json& j) {
    NetworkSpec net;
    net.timesteps = j.value("timesteps", std::int64_t{1});
    NeuronConfig default_neuron;
    if (j.contains("neuron")) default_neuron = neuron_from_json(j.at("neuron"), NeuronConfig{});
    for (const auto& lj : j.at("layers")) {
        const std::string type = lj.at("type").get<std::string>();
        if (type == "conv") {
            Conv2dSpec c;
            c.filters = lj.at("filters").get<std::int64_t>();
            c.kernel = lj.at("kernel").get<std::int64_t>();
            c.padding = lj.value("padding", std::int64_t{0});
            net.layers.emplace_back(c);
        } else if (type == "avgpool2x2") {
            net.layers.emplace_back(AvgPool2x2Spec{});
        } else if (type == "dense") {
            net.layers.emplace_back(DenseSpec{lj.at("units").get<std::int64_t>()});
        } else if (type == "spiking") {
            SpikingSpec s;
            s.neuron = lj.contains("neuron") ? neuron_from_json(lj.at("neuron"), default_neuron)
                                             : default_neuron;
            net.layers.emplace_back(s);
        } else if (type == "relu") {
            net.layers.emplace_back(ReluSpec{});
        } else if (type == "flatten") {
            net.layers.emplace_back(FlattenSpec{});
        } else {
            throw std::invalid_argument("config: unknown layer type '" + type + "'");
        }
    }
    return net;
}

nlohmann::json dataset_to_json(const DatasetConfig& d) {
    nlohmann::json j;
    j["kind"] = d.kind == DatasetConfig::Kind::MnistIdx ? "mnist-idx" : "synth-blobs";
    if (d.kind == DatasetConfig::Kind::MnistIdx) {
        j["dir"] = d.dir;
    } else {
        j["classes"] = d.classes;
        j["per_class"] = d.per_class;
        j["test_per_class"] = d.test_per_class;
        j["dims"] = d.dims;
        j["spread"] = d.spread;
        j["seed"] = d.blob_seed;
    }
    j["train_limit"] = d.train_limit;
    j["test_limit"] = d.test_limit;
    return j;
}

DatasetConfig dataset_from_json(const nlohmann::json& j) {
    DatasetConfig d;
    const std::string kind = j.value("kind", std::string{"mnist-idx"});
    if (kind == "mnist-idx") {
        d.kind = DatasetConfig::Kind::MnistIdx;
        d.dir = j.value("dir", std::string{});
    } else if (kind == "synth-blobs") {
        d.kind = DatasetConfig::Kind::SynthBlobs;
        d.classes = j.value("classes", 2);
        d.per_class = j.value("per_class", 500);
        d.test_per_class = j.value("test_per_class", 100);
        d.dims = j.value("dims", 16);
        d.spread = j.value("spread", 0.15);
        d.blob_seed = j.value("seed", std::uint64_t{1234});
    } else {
        throw std::invalid_argument("config: unknown dataset kind '" + kind + "'");
    }
    d.train_limit = j.value("train_limit", std::int64_t{0});
    d.test_limit = j.value("test_limit", std::int64_t{0});
    return d;
}

nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
    nlohmann::json j;
    j["kind"] = o.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd-momentum";
    j["learning_rate"] = o.learning_rate;
    if (o.kind == OptimizerConfig::Kind::SgdMomentum) {
        j["momentum"] = o.momentum;
    } else {
        j["betas"] = {o.beta1, o.beta2};
        j["epsilon"] = o.epsilon;
    }
    switch (o.scheduler.kind) {
        case SchedulerConfig::Kind::None:
            j["scheduler"] = {{"kind", "none"}};
            break;
        case SchedulerConfig::Kind::StepLR:
            j["scheduler"] = {{"kind", "step"},
                              {"gamma", o.scheduler.gamma},
                              {"step_size", o.scheduler.step_size}};
            break;
        case SchedulerConfig::Kind::Cosine:
            j["scheduler"] = {{"kind", "cosine"}, {"t_max", o.scheduler.t_max}};
            break;
    }
    return j;
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
    OptimizerConfig o;
    const std::string kind = j.value("kind", std::string{"adam"});
    if (kind == "adam") {
        o.kind = OptimizerConfig::Kind::Adam;
    } else if (kind == "sgd-momentum" || kind == "sgd") {
        o.kind = OptimizerConfig::Kind::SgdMomentum;
    } else {
        throw std::invalid_argument("config: unknown optimizer '" + kind + "'");
    }
    o.learning_rate = j.value("learning_rate", 1e-3);
    o.momentum = j.value("momentum", 0.0);
    if (j.contains("betas")) {
        o.beta1 = j.at("betas").at(0).get<double>();
        o.beta2 = j.at("betas").at(1).get<double>();
    }
    o.epsilon = j.value("epsilon", 1e-8);
    if (j.contains("scheduler")) {
        const auto& sj = j.at("scheduler");
        const std::string sk = sj.value("kind", std::string{"none"});
        if (sk == "none") {
            o.scheduler.kind = SchedulerConfig::Kind::None;
        } else if (sk == "step") {
            o.scheduler.kind = SchedulerConfig::Kind::StepLR;
            o.scheduler.gamma = sj.value("gamma", 0.5);
            o.scheduler.step_size = sj.value("step_size", 30);
        } else if (sk == "cosine") {
            o.scheduler.kind = SchedulerConfig::Kind::Cosine;
            o.scheduler.t_max = sj.value("t_max", 100);
        } else {
            throw std::invalid_argument("config: unknown scheduler '" + sk + "'");
        }
    }
    return o;
}

nlohmann::json kd_to_json(const KDConfig& k) {
    nlohmann::json j;
    switch (k.kind) {
        case KDConfig::Kind::None:
            j["kind"] = "none";
            break;
        case KDConfig::Kind::Mse:
            j["kind"] = "mse";
            break;
        case KDConfig::Kind::SoftTargets:
            j["kind"] = "st";
            break;
        case KDConfig::Kind::SoftTargetsHet:
            j["kind"] = "st-het";
            break;
    }
    j["alpha"] = k.alpha;
    j["tau"] = k.tau;
    j["tau_t"] = k.tau_t;
    j["tau_s"] = k.tau_s;
    return j;
}

KDConfig kd_from_json(const nlohmann::json& j) {
    KDConfig k;
    const std::string kind = j.value("kind", std::string{"none"});
    if (kind == "none") {
        k.kind = KDConfig::Kind::None;
    } else if (kind == "mse") {
        k.kind = KDConfig::Kind::Mse;
    } else if (kind == "st") {
        k.kind = KDConfig::Kind::SoftTargets;
    } else if (kind == "st-het") {
        k.kind = KDConfig::Kind::SoftTargetsHet;
    } else {
        throw std::invalid_argument("config: unknown kd kind '" + kind + "'");
    }
    k.alpha = j.value("alpha", 0.1);
    k.tau = j.value("tau", 1.0);
    k.tau_t = j.value("tau_t", 1.0);
    k.tau_s = j.value("tau_s", 1.0);
    return k;
}

nlohmann::json reg_to_json(const RegConfig& r) {
    nlohmann::json j;
    j["target"] = r.target == RegConfig::Target::Activations ? "activations" : "logits";
    switch (r.norm) {
        case RegConfig::Norm::L1:
            j["norm"] = "l1";
            break;
        case RegConfig::Norm::L2:
            j["norm"] = "l2";
            break;
        case RegConfig::Norm::L2Sq:
            j["norm"] = "l2sq";
            break;
    }
    j["lambda"] = r.lambda;
    return j;
}

RegConfig reg_from_json(const nlohmann::json& j) {
    RegConfig r;
    const std::string target = j.value("target", std::string{"activations"});
    if (target == "activations") {
        r.target = RegConfig::Target::Activations;
    } else if (target == "logits") {
        r.target = RegConfig::Target::Logits;
    } else {
        throw std::invalid_argument("config: unknown reg target '" + target + "'");
    }
    const std::string norm = j.value("norm", std::string{"l1"});
    if (norm == "l1") {
        r.norm = RegConfig::Norm::L1;
    } else if (norm == "l2") {
        r.norm = RegConfig::Norm::L2;
    } else if (norm == "l2sq") {
        r.norm = RegConfig::Norm::L2Sq;
    } else {
        throw std::invalid_argument("config: unknown norm '" + norm + "'");
    }
    r.lambda = j.value("lambda", 0.0);
    return r;
}

nlohmann::json sweep_to_json(const SweepAxes& s) {
    nlohmann::json j;
    if (!s.tau.empty()) j["tau"] = s.tau;
    if (!s.tau_t.empty()) j["tau_t"] = s.tau_t;
    if (!s.tau_s.empty()) j["tau_s"] = s.tau_s;
    if (!s.alpha.empty()) j["alpha"] = s.alpha;
    if (!s.lambda.empty()) j["lambda"] = s.lambda;
    return j;
}

SweepAxes sweep_from_json(const nlohmann::json& j) {
    SweepAxes s;
    if (j.contains("tau")) s.tau = j.at("tau").get<std::vector<double>>();
    if (j.contains("tau_t")) s.tau_t = j.at("tau_t").get<std::vector<double>>();
    if (j.contains("tau_s")) s.tau_s = j.at("tau_s").get<std::vector<double>>();
    if (j.contains("alpha")) s.alpha = j.at("alpha").get<std::vector<double>>();
    if (j.contains("lambda")) s.lambda = j.at("lambda").get<std::vector<double>>();
    return s;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset_to_json(dataset);
    j["student"] = network_to_json(student);
    if (teacher) j["teacher"] = network_to_json(*teacher);
    if (!teacher_weights.empty()) j["teacher_weights"] = teacher_weights;
    j["optimizer"] = optimizer_to_json(optimizer);
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["kd"] = kd_to_json(kd);
    j["reg"] = reg_to_json(reg);
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    if (!baseline_id.empty()) j["baseline_id"] = baseline_id;
    if (!sweep.empty()) j["sweep"] = sweep_to_json(sweep);
    j["precision"] = precision == Precision::F32 ? "f32" : "f64";
    j["threads"] = threads;
    j["eval_every"] = eval_every;
    if (!label.empty()) j["label"] = label;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.dataset = dataset_from_json(j.at("dataset"));
    c.student = network_from_json(j.at("student"));
    if (j.contains("teacher")) c.teacher = network_from_json(j.at("teacher"));
    c.teacher_weights = j.value("teacher_weights", std::string{});
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"));
    c.epochs = j.value("epochs", 10);
    c.batch_size = j.value("batch_size", std::int64_t{256});
    if (j.contains("kd")) c.kd = kd_from_json(j.at("kd"));
    if (j.contains("reg")) c.reg = reg_from_json(j.at("reg"));
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out_dir = j.value("out_dir", std::string{"runs_out"});
    c.baseline_id = j.value("baseline_id", std::string{});
    if (j.contains("sweep")) c.sweep = sweep_from_json(j.at("sweep"));
    const std::string prec = j.value("precision", std::string{"f32"});
    if (prec == "f32") {
        c.precision = Precision::F32;
    } else if (prec == "f64") {
        c.precision = Precision::F64;
    } else {
        throw std::invalid_argument("config: precision must be f32 or f64");
    }
    c.threads = j.value("threads", 0);
    c.eval_every = j.value("eval_every", 1);
    c.label = j.value("label", std::string{});
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    is >> j;
    return from_json(j);
}

std::uint64_t ExperimentConfig::config_hash() const {
    nlohmann::json j;
    nlohmann::json d = dataset_to_json(dataset);
    d.erase("dir");  // data location is not part of the config identity
    j["dataset"] = d;
    j["student"] = network_to_json(student);
    if (teacher) j["teacher"] = network_to_json(*teacher);
    j["optimizer"] = optimizer_to_json(optimizer);
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["kd"] = kd_to_json(kd);
    j["reg"] = reg_to_json(reg);
    j["precision"] = precision == Precision::F32 ? "f32" : "f64";
    return fnv1a64(j.dump());
}

namespace {

std::string auto_label(const ExperimentConfig& c) {
    std::string parts;
    switch (c.kd.kind) {
        case KDConfig::Kind::None:
            break;
        case KDConfig::Kind::Mse:
            parts = "mse-a" + fmt_g(c.kd.alpha);
            break;
        case KDConfig::Kind::SoftTargets:
            parts = "st-t" + fmt_g(c.kd.tau);
            break;
        case KDConfig::Kind::SoftTargetsHet:
            parts = "sthet-ts" + fmt_g(c.kd.tau_s) + "-tt" + fmt_g(c.kd.tau_t);
            break;
    }
    if (c.reg.lambda > 0.0) {
        std::string norm = c.reg.norm == RegConfig::Norm::L1
                               ? "l1"
                               : (c.reg.norm == RegConfig::Norm::L2 ? "l2" : "l2sq");
        std::string target = c.reg.target == RegConfig::Target::Activations ? "act" : "log";
        if (!parts.empty()) parts += "-";
        parts += norm + target + "-lam" + fmt_g(c.reg.lambda);
    }
    return parts.empty() ? "base" : parts;
}

std::string hash_hex8(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx", static_cast<unsigned long long>(h & 0xffffffffull));
    return buf;
}

}  // namespace

std::string ExperimentConfig::config_id() const {
    return (label.empty() ? auto_label(*this) : label) + "-" + hash_hex8(config_hash());
}

void apply_env_overrides(ExperimentConfig& cfg) {
    auto get = [](const char* name) -> const char* { return std::getenv(name); };
    if (const char* v = get("SPIKEFORGE_THREADS")) cfg.threads = std::atoi(v);
    if (const char* v = get("SPIKEFORGE_OUT")) cfg.out_dir = v;
    if (const char* v = get("SPIKEFORGE_SEED")) {
        cfg.seeds = {static_cast<std::uint64_t>(std::strtoull(v, nullptr, 10))};
    }
    if (const char* v = get("SPIKEFORGE_SEEDS")) {
        std::vector<std::uint64_t> seeds;
        std::string s(v);
        std::size_t pos = 0;
        while (pos < s.size()) {
            std::size_t comma = s.find(',', pos);
            if (comma == std::string::npos) comma = s.size();
            seeds.push_back(std::strtoull(s.substr(pos, comma - pos).c_str(), nullptr, 10));
            pos = comma + 1;
        }
        if (!seeds.empty()) cfg.seeds = seeds;
    }
    if (const char* v = get("SPIKEFORGE_PRECISION")) {
        const std::string p(v);
        if (p == "f32") cfg.precision = ExperimentConfig::Precision::F32;
        if (p == "f64") cfg.precision = ExperimentConfig::Precision::F64;
    }
    if (const char* v = get("SPIKEFORGE_EPOCHS")) cfg.epochs = std::atoi(v);
    if (const char* v = get("SPIKEFORGE_BATCH")) cfg.batch_size = std::atoll(v);
    if (const char* v = get("SPIKEFORGE_MNIST_DIR")) {
        if (cfg.dataset.kind == DatasetConfig::Kind::MnistIdx) cfg.dataset.dir = v;
    }
}

// ---------------------------------------------------------------------------
// Data loading and evaluation

template <typename T>
LoadedData<T> load_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    LoadedData<T> data;
    if (cfg.kind == DatasetConfig::Kind::MnistIdx) {
        const fs::path dir(cfg.dir);
        data.train = load_idx<T>((dir / "train-images-idx3-ubyte").string(),
                                 (dir / "train-labels-idx1-ubyte").string());
        data.test = load_idx<T>((dir / "t10k-images-idx3-ubyte").string(),
                                (dir / "t10k-labels-idx1-ubyte").string());
    } else {
        data.train = synth_blobs<T>(cfg.classes, cfg.per_class, cfg.dims, cfg.blob_seed,
                                    cfg.spread);
        data.test = synth_blobs<T>(cfg.classes, cfg.test_per_class, cfg.dims,
                                   derive_seed(cfg.blob_seed, 77), cfg.spread);
    }
    if (cfg.train_limit > 0) data.train = data.train.head(cfg.train_limit);
    if (cfg.test_limit > 0) data.test = data.test.head(cfg.test_limit);
    return data;
}

namespace {

template <typename T>
double batch_accuracy(const Tensor<T>& logits, const std::vector<int>& labels) {
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    auto d = logits.data();
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = d.data() + i * c;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct);
}

}  // namespace

template <typename T>
EvalResult<T> evaluate_student(const Network<T>& net, const Dataset<T>& test,
                               std::int64_t batch_size) {
    NoGradScope<T> no_grad;
    EvalResult<T> result;
    double correct = 0;
    const auto plan = batch_plan(test.size(), batch_size, 0, false);
    for (const auto& idx : plan) {
        auto [images, labels] = gather_batch(test, idx);
        auto fwd = net.forward_spiking(images);
        correct += batch_accuracy(fwd.logits, labels);
        result.record.merge(fwd.record);
    }
    result.accuracy = correct / static_cast<double>(test.size());
    return result;
}

template <typename T>
double evaluate_teacher_accuracy(const Network<T>& net, const Dataset<T>& test,
                                 std::int64_t batch_size) {
    NoGradScope<T> no_grad;
    double correct = 0;
    const auto plan = batch_plan(test.size(), batch_size, 0, false);
    for (const auto& idx : plan) {
        auto [images, labels] = gather_batch(test, idx);
        correct += batch_accuracy(net.forward_teacher(images), labels);
    }
    return correct / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Teacher training

std::string teacher_checkpoint_path(const ExperimentConfig& cfg) {
    if (!cfg.teacher) throw std::invalid_argument("train_teacher: no teacher spec in config");
    nlohmann::json identity;
    identity["teacher"] = network_to_json(*cfg.teacher);
    nlohmann::json d = dataset_to_json(cfg.dataset);
    d.erase("dir");
    identity["dataset"] = d;
    identity["optimizer"] = optimizer_to_json(cfg.optimizer);
    identity["epochs"] = cfg.epochs;
    identity["batch_size"] = cfg.batch_size;
    identity["seed"] = cfg.seeds.at(0);
    const std::string id = "teacher-" + hash_hex8(fnv1a64(identity.dump()));
    return (fs::path(cfg.out_dir) / "weights" / (id + ".spkf")).string();
}

namespace {

template <typename T>
MetricsReport train_teacher_impl(const ExperimentConfig& cfg) {
    const std::uint64_t seed = cfg.seeds.at(0);
    LoadedData<T> data = load_dataset<T>(cfg.dataset);
    Network<T> net(*cfg.teacher, data.train.sample_shape(), derive_seed(seed, 1));
    Optimizer<T> opt(net.parameters(), cfg.optimizer);

    double best_acc = -1.0;
    std::vector<std::vector<T>> best_weights;
    auto snapshot = [&]() {
        best_weights.clear();
        for (const auto& p : net.parameters()) {
            best_weights.emplace_back(p.data().begin(), p.data().end());
        }
    };

    // epochs == 0 keeps the untrained initialization.
    double acc = evaluate_teacher_accuracy(net, data.test, cfg.batch_size);
    best_acc = acc;
    snapshot();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_epoch(epoch);
        const auto plan =
            batch_plan(data.train.size(), cfg.batch_size, derive_seed(seed, 1000 + epoch), true);
        for (const auto& idx : plan) {
            auto [images, labels] = gather_batch(data.train, idx);
            Graph<T> graph;
            RecordScope<T> scope(graph);
            Tensor<T> logits = net.forward_teacher(images);
            Tensor<T> loss = cross_entropy(logits, labels);
            if (!std::isfinite(static_cast<double>(loss.item()))) {
                throw std::runtime_error("train_teacher: loss diverged (not finite); run aborted");
            }
            opt.zero_grad();
            graph.backward(loss);
            graph.clear();
            opt.step();
        }
        acc = evaluate_teacher_accuracy(net, data.test, cfg.batch_size);
        if (acc > best_acc) {
            best_acc = acc;
            snapshot();
        }
    }

    // Restore the best checkpoint and persist it.
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        std::copy(best_weights[i].begin(), best_weights[i].end(),
                  net.parameters()[i].data().begin());
    }
    const std::string path = teacher_checkpoint_path(cfg);
    fs::create_directories(fs::path(path).parent_path());
    save_network_weights(path, net);

    MetricsReport report;
    report.config_id = fs::path(path).stem().string();
    report.config_hash = cfg.config_hash();
    report.seeds = {seed};
    report.accuracy = best_acc;
    return report;
}

}  // namespace

MetricsReport train_teacher(const ExperimentConfig& cfg) {
    if (!cfg.teacher) throw std::invalid_argument("train_teacher: no teacher spec in config");
    cfg.teacher->validate_teacher();
    cfg.optimizer.validate();
    set_thread_count(cfg.threads);
    return cfg.precision == ExperimentConfig::Precision::F64 ? train_teacher_impl<double>(cfg)
                                                             : train_teacher_impl<float>(cfg);
}

// ---------------------------------------------------------------------------
// Student training

namespace {

template <typename T>
Network<T> resolve_teacher(const ExperimentConfig& cfg, const Shape& sample_shape) {
    if (!cfg.teacher_weights.empty()) {
        if (!cfg.teacher) {
            throw std::invalid_argument(
                "train_student: teacher weights given but no teacher spec to load them into");
        }
        Network<T> teacher(*cfg.teacher, sample_shape, 0);
        load_network_weights(cfg.teacher_weights, teacher);
        return teacher;
    }
    if (!cfg.teacher) {
        throw std::invalid_argument("train_student: KD enabled but no teacher available");
    }
    const std::string ckpt = teacher_checkpoint_path(cfg);
    if (!fs::exists(ckpt)) {
        std::fprintf(stderr, "[spikeforge] training teacher checkpoint %s\n", ckpt.c_str());
        train_teacher(cfg);
    }
    Network<T> teacher(*cfg.teacher, sample_shape, 0);
    load_network_weights(ckpt, teacher);
    return teacher;
}

template <typename T>
MetricsReport train_student_one(const ExperimentConfig& cfg, std::uint64_t seed,
                                const LoadedData<T>& data, const Network<T>* teacher) {
    Network<T> net(cfg.student, data.train.sample_shape(), derive_seed(seed, 1));
    Optimizer<T> opt(net.parameters(), cfg.optimizer);
    const bool use_kd = cfg.kd.kind != KDConfig::Kind::None;
    const bool use_reg = cfg.reg.lambda > 0.0;

    EvalResult<T> eval;
    bool collapse_seen = false;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_epoch(epoch);
        bool collapse_this_epoch = false;
        const auto plan =
            batch_plan(data.train.size(), cfg.batch_size, derive_seed(seed, 1000 + epoch), true);
        for (const auto& idx : plan) {
            auto [images, labels] = gather_batch(data.train, idx);
            Graph<T> graph;
            RecordScope<T> scope(graph);
            auto fwd = net.forward_spiking(images);
            if (fwd.record.collapse && !collapse_this_epoch) {
                collapse_this_epoch = true;
                collapse_seen = true;
                std::fprintf(stderr,
                             "[spikeforge] warning: zero-spike collapse in training batch "
                             "(config %s, seed %llu, epoch %d)\n",
                             cfg.config_id().c_str(), static_cast<unsigned long long>(seed), epoch);
            }
            Tensor<T> loss = loss_cle(fwd.logits, labels);
            if (use_kd) {
                Tensor<T> teacher_logits;
                {
                    NoGradScope<T> no_grad;
                    teacher_logits = teacher->forward_teacher(images);
                }
                loss = loss_total(loss, kd_loss(cfg.kd, fwd.logits, teacher_logits), cfg.kd.alpha);
            }
            if (use_reg) {
                Tensor<T> term =
                    cfg.reg.target == RegConfig::Target::Activations
                        ? reg_term_activations<T>(fwd.layer_spikes, cfg.student.timesteps,
                                                  cfg.reg.norm)
                        : reg_term_logits(fwd.logits, cfg.reg.norm);
                loss = loss_with_reg(loss, term, cfg.reg.lambda);
            }
            if (!std::isfinite(static_cast<double>(loss.item()))) {
                throw std::runtime_error("train_student: loss diverged (not finite); run aborted");
            }
            opt.zero_grad();
            graph.backward(loss);
            graph.clear();
            opt.step();
        }
        if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            eval = evaluate_student(net, data.test, cfg.batch_size);
        }
    }
    if (cfg.epochs == 0) eval = evaluate_student(net, data.test, cfg.batch_size);

    MetricsReport report;
    report.config_id = cfg.config_id();
    report.config_hash = cfg.config_hash();
    report.seeds = {seed};
    report.accuracy = eval.accuracy;
    report.stats = spikerate(eval.record, net.total_spiking_neurons());
    report.collapse = eval.record.total_spikes() == 0;
    (void)collapse_seen;
    return report;
}

void attach_deltas(MetricsReport& r, const MetricsReport* baseline) {
    if (!baseline) {
        // Self-baseline: the run defines its own reference.
        r.baseline_id = r.config_id;
        r.delta_acc_r = 0.0;
        r.delta_sr_r = 0.0;
        r.per_layer_deltas.clear();
        for (const auto& l : r.stats.per_layer) r.per_layer_deltas.push_back({l.layer_id, 0.0});
        return;
    }
    r.baseline_id = baseline->config_id;
    r.delta_acc_r = delta_acc(r.accuracy, baseline->accuracy);
    r.delta_sr_r = delta_spikerate(r.stats.spikerate, baseline->stats.spikerate);
    r.per_layer_deltas = per_layer_report(r.stats, baseline->stats);
}

void write_report_json(const MetricsReport& r, const std::string& out_dir, bool mean) {
    const fs::path dir = fs::path(out_dir) / "reports";
    fs::create_directories(dir);
    const std::string name =
        r.config_id + (mean ? ".mean.json" : ".seed" + r.seed_label() + ".json");
    std::ofstream os(dir / name, std::ios::trunc);
    if (!os) throw std::runtime_error("report: cannot write " + (dir / name).string());
    os << r.to_json().dump(2) << "\n";
}

template <typename T>
StudentOutcome train_student_impl(const ExperimentConfig& cfg) {
    LoadedData<T> data = load_dataset<T>(cfg.dataset);

    std::optional<Network<T>> teacher;
    if (cfg.kd.kind != KDConfig::Kind::None) {
        teacher = resolve_teacher<T>(cfg, data.train.sample_shape());
    }

    std::optional<MetricsReport> baseline;
    if (!cfg.baseline_id.empty() && cfg.baseline_id != cfg.config_id()) {
        const fs::path path = fs::path(cfg.out_dir) / "reports" / (cfg.baseline_id + ".mean.json");
        std::ifstream is(path);
        if (!is) {
            throw std::runtime_error("train_student: baseline id '" + cfg.baseline_id +
                                     "' unresolved (no report at " + path.string() + ")");
        }
        nlohmann::json j;
        is >> j;
        baseline = MetricsReport::from_json(j);
    }

    StudentOutcome outcome;
    for (std::uint64_t seed : cfg.seeds) {
        MetricsReport r = train_student_one<T>(cfg, seed, data, teacher ? &*teacher : nullptr);
        attach_deltas(r, baseline ? &*baseline : nullptr);
        write_report_json(r, cfg.out_dir, false);
        outcome.per_seed.push_back(std::move(r));
    }
    outcome.averaged = average_runs(outcome.per_seed);
    // Averaged deltas are re-derived from the averaged accuracy/spikerate
    // rather than averaging per-seed ratios when a baseline is present.
    if (baseline) {
        attach_deltas(outcome.averaged, &*baseline);
    } else {
        attach_deltas(outcome.averaged, nullptr);
    }
    write_report_json(outcome.averaged, cfg.out_dir, true);
    return outcome;
}

}  // namespace

StudentOutcome train_student(const ExperimentConfig& cfg) {
    cfg.validate();
    set_thread_count(cfg.threads);
    return cfg.precision == ExperimentConfig::Precision::F64 ? train_student_impl<double>(cfg)
                                                             : train_student_impl<float>(cfg);
}

// ---------------------------------------------------------------------------
// Sweeps

SweepResult run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<ExperimentConfig> cells;
    ExperimentConfig base = cfg;
    base.sweep = SweepAxes{};
    base.label.clear();  // per-cell labels derive from their own settings

    const auto& axes = cfg.sweep;
    if (!axes.tau.empty() && cfg.kd.kind != KDConfig::Kind::SoftTargets) {
        throw std::invalid_argument("sweep: tau axis requires kd kind 'st'");
    }
    if ((!axes.tau_t.empty() || !axes.tau_s.empty()) &&
        cfg.kd.kind != KDConfig::Kind::SoftTargetsHet) {
        throw std::invalid_argument("sweep: tau_t/tau_s axes require kd kind 'st-het'");
    }
    if (!axes.alpha.empty() && cfg.kd.kind == KDConfig::Kind::None) {
        throw std::invalid_argument("sweep: alpha axis requires a KD loss");
    }

    std::vector<double> lambdas = axes.lambda;
    std::sort(lambdas.begin(), lambdas.end());
    auto one_or = [](const std::vector<double>& v) {
        return v.empty() ? std::vector<double>{std::nan("")} : v;
    };
    for (double lam : one_or(lambdas)) {
        for (double alpha : one_or(axes.alpha)) {
            for (double tau : one_or(axes.tau)) {
                for (double tau_t : one_or(axes.tau_t)) {
                    for (double tau_s : one_or(axes.tau_s)) {
                        ExperimentConfig cell = base;
                        if (!std::isnan(lam)) cell.reg.lambda = lam;
                        if (!std::isnan(alpha)) cell.kd.alpha = alpha;
                        if (!std::isnan(tau)) cell.kd.tau = tau;
                        if (!std::isnan(tau_t)) cell.kd.tau_t = tau_t;
                        if (!std::isnan(tau_s)) cell.kd.tau_s = tau_s;
                        cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }

    SweepResult result;
    for (const auto& cell : cells) {
        try {
            StudentOutcome out = train_student(cell);
            for (auto& r : out.per_seed) result.reports.push_back(std::move(r));
            result.reports.push_back(std::move(out.averaged));
        } catch (const std::exception& e) {
            result.failures.push_back({cell.config_id(), e.what()});
            std::fprintf(stderr, "[spikeforge] sweep cell %s failed: %s\n",
                         cell.config_id().c_str(), e.what());
        }
    }
    if (!result.reports.empty()) emit_reports(result.reports, cfg.out_dir);
    return result;
}

// ---------------------------------------------------------------------------
// Report emission

namespace {

bool report_order(const MetricsReport& a, const MetricsReport& b) {
    if (a.config_id != b.config_id) return a.config_id < b.config_id;
    if (a.is_mean() != b.is_mean()) return !a.is_mean();  // mean rows last
    return a.seed_label() < b.seed_label();
}

}  // namespace

void emit_reports(const std::vector<MetricsReport>& corpus, const std::string& out_dir) {
    if (corpus.empty()) throw std::invalid_argument("emit_reports: empty corpus");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) {
        throw std::runtime_error("emit_reports: cannot create output directory " + out_dir);
    }
    std::vector<MetricsReport> sorted = corpus;
    std::sort(sorted.begin(), sorted.end(), report_order);

    {
        std::ofstream os(fs::path(out_dir) / "runs.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("emit_reports: cannot write runs.csv in " + out_dir);
        os << runs_csv_header() << "\n";
        for (const auto& r : sorted) os << runs_csv_row(r) << "\n";
    }
    {
        std::ofstream os(fs::path(out_dir) / "per_layer.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("emit_reports: cannot write per_layer.csv in " + out_dir);
        os << per_layer_csv_header() << "\n";
        for (const auto& r : sorted) {
            for (const auto& row : per_layer_csv_rows(r)) os << row << "\n";
        }
    }
    {
        nlohmann::json summary;
        summary["configs"] = nlohmann::json::array();
        std::vector<const MetricsReport*> means;
        for (const auto& r : sorted) {
            if (r.is_mean() || !r.per_seed.empty()) means.push_back(&r);
        }
        if (means.empty()) {
            for (const auto& r : sorted) means.push_back(&r);
        }
        for (const auto* r : means) summary["configs"].push_back(r->to_json());
        // Pareto set: maximize delta_acc_r, minimize delta_sr_r.
        summary["pareto"] = nlohmann::json::array();
        for (const auto* r : means) {
            bool dominated = false;
            for (const auto* other : means) {
                if (other == r) continue;
                const bool better_eq = other->delta_acc_r >= r->delta_acc_r &&
                                       other->delta_sr_r <= r->delta_sr_r;
                const bool strictly = other->delta_acc_r > r->delta_acc_r ||
                                      other->delta_sr_r < r->delta_sr_r;
                if (better_eq && strictly) {
                    dominated = true;
                    break;
                }
            }
            if (!dominated) {
                summary["pareto"].push_back({{"config_id", r->config_id},
                                             {"delta_acc_r", r->delta_acc_r},
                                             {"delta_sr_r", r->delta_sr_r}});
            }
        }
        std::ofstream os(fs::path(out_dir) / "summary.json", std::ios::trunc);
        if (!os) throw std::runtime_error("emit_reports: cannot write summary.json in " + out_dir);
        os << summary.dump(2) << "\n";
    }
}

std::vector<MetricsReport> load_report_corpus(const std::string& dir) {
    const fs::path reports = fs::path(dir) / "reports";
    if (!fs::is_directory(reports)) {
        throw std::runtime_error("report: no reports directory under " + dir);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(reports)) {
        if (entry.path().extension() == ".json" &&
            entry.path().stem().string().ends_with(".mean")) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<MetricsReport> corpus;
    for (const auto& f : files) {
        std::ifstream is(f);
        nlohmann::json j;
        is >> j;
        MetricsReport mean = MetricsReport::from_json(j);
        for (const auto& r : mean.per_seed) corpus.push_back(r);
        corpus.push_back(mean);
    }
    return corpus;
}

#define SPIKEFORGE_HARNESS_INSTANTIATE(T)                                                    \
    template EvalResult<T> evaluate_student<T>(const Network<T>&, const Dataset<T>&,         \
                                               std::int64_t);                               \
    template double evaluate_teacher_accuracy<T>(const Network<T>&, const Dataset<T>&,       \
                                                 std::int64_t);                             \
    template LoadedData<T> load_dataset<T>(const DatasetConfig&);

SPIKEFORGE_HARNESS_INSTANTIATE(float)
SPIKEFORGE_HARNESS_INSTANTIATE(double)
#undef SPIKEFORGE_HARNESS_INSTANTIATE

}  // namespace spikeforge
