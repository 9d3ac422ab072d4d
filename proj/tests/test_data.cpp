#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "spikeforge/data.hpp"
#include "spikeforge/harness.hpp"
#include "spikeforge/network.hpp"
#include "spikeforge/ops.hpp"
#include "spikeforge/optim.hpp"

using spikeforge::Dataset;
using Tensor = spikeforge::Tensor<double>;
namespace fs = std::filesystem;

namespace {

Dataset<double> tiny_dataset() {
    Dataset<double> ds;
    ds.classes = 2;
    // Two 2x2 images with u8-representable pixel values.
    ds.images = Tensor::from_data({2, 1, 2, 2}, {0.0, 1.0, 128.0 / 255.0, 34.0 / 255.0,  //
                                                 17.0 / 255.0, 0.0, 1.0, 200.0 / 255.0});
    ds.labels = {0, 1};
    return ds;
}

}  // namespace

TEST_CASE("IDX round trip is lossless for u8-representable pixels") {
    const fs::path dir = fs::temp_directory_path() / "spikeforge_idx_test";
    fs::create_directories(dir);
    const std::string img = (dir / "img").string();
    const std::string lbl = (dir / "lbl").string();
    auto ds = tiny_dataset();
    spikeforge::save_idx(img, lbl, ds);
    auto back = spikeforge::load_idx<double>(img, lbl, 2);
    REQUIRE(back.size() == 2);
    REQUIRE(back.images.shape() == ds.images.shape());
    for (std::int64_t i = 0; i < ds.images.size(); ++i) {
        CHECK(back.images.data()[i] == ds.images.data()[i]);
    }
    CHECK(back.labels == ds.labels);
    back.validate();
}

TEST_CASE("IDX magic and consistency checks name the offending file") {
    const fs::path dir = fs::temp_directory_path() / "spikeforge_idx_bad";
    fs::create_directories(dir);
    const std::string img = (dir / "img").string();
    const std::string lbl = (dir / "lbl").string();
    auto ds = tiny_dataset();
    spikeforge::save_idx(img, lbl, ds);

    SUBCASE("labels file with the images magic is rejected") {
        try {
            spikeforge::load_idx<double>(img, img, 2);
            FAIL("expected throw");
        } catch (const std::runtime_error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("magic") != std::string::npos);
            CHECK(msg.find(img) != std::string::npos);
        }
    }
    SUBCASE("truncated payload rejected") {
        std::ifstream in(img, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const std::string cut = (dir / "cut").string();
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
        out.close();
        CHECK_THROWS_AS(spikeforge::load_idx<double>(cut, lbl, 2), std::runtime_error);
    }
    SUBCASE("count mismatch between images and labels rejected") {
        auto one = ds.head(1);
        const std::string img1 = (dir / "img1").string();
        const std::string lbl1 = (dir / "lbl1").string();
        spikeforge::save_idx(img1, lbl1, one);
        CHECK_THROWS_AS(spikeforge::load_idx<double>(img, lbl1, 2), std::runtime_error);
    }
}

TEST_CASE("synthetic blobs") {
    SUBCASE("deterministic under the seed") {
        auto a = spikeforge::synth_blobs<double>(3, 40, 8, 99);
        auto b = spikeforge::synth_blobs<double>(3, 40, 8, 99);
        REQUIRE(a.size() == b.size());
        for (std::int64_t i = 0; i < a.images.size(); ++i) {
            CHECK(a.images.data()[i] == b.images.data()[i]);
        }
        CHECK(a.labels == b.labels);
        auto c = spikeforge::synth_blobs<double>(3, 40, 8, 100);
        bool any_diff = false;
        for (std::int64_t i = 0; i < a.images.size(); ++i) {
            any_diff = any_diff || a.images.data()[i] != c.images.data()[i];
        }
        CHECK(any_diff);
    }
    SUBCASE("pixels in range and labels valid") {
        auto ds = spikeforge::synth_blobs<double>(4, 25, 6, 7);
        ds.validate();
    }
    SUBCASE("spread -> 0 makes classes trivially separable by a linear model") {
        auto ds = spikeforge::synth_blobs<double>(2, 30, 4, 5, 1e-9);
        // Nearest-centroid on the first two coordinates classifies perfectly.
        std::vector<double> cx(2, 0), cy(2, 0);
        std::vector<int> counts(2, 0);
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            const int y = ds.labels[static_cast<std::size_t>(i)];
            cx[y] += ds.images.data()[i * 4 + 0];
            cy[y] += ds.images.data()[i * 4 + 1];
            counts[y] += 1;
        }
        for (int c = 0; c < 2; ++c) {
            cx[c] /= counts[c];
            cy[c] /= counts[c];
        }
        int correct = 0;
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            const double x = ds.images.data()[i * 4 + 0];
            const double y = ds.images.data()[i * 4 + 1];
            int best = 0;
            double best_d = 1e18;
            for (int c = 0; c < 2; ++c) {
                const double d = (x - cx[c]) * (x - cx[c]) + (y - cy[c]) * (y - cy[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            correct += best == ds.labels[static_cast<std::size_t>(i)];
        }
        CHECK(correct == ds.size());
    }
    SUBCASE("default spread: a one-dense-layer teacher exceeds 95% test accuracy quickly") {
        spikeforge::DatasetConfig dc;
        dc.kind = spikeforge::DatasetConfig::Kind::SynthBlobs;
        dc.classes = 2;
        dc.per_class = 200;
        dc.test_per_class = 60;
        dc.dims = 8;
        dc.blob_seed = 21;
        auto data = spikeforge::load_dataset<double>(dc);

        spikeforge::NetworkSpec teacher;
        teacher.layers = {spikeforge::FlattenSpec{}, spikeforge::DenseSpec{2}};
        spikeforge::Network<double> net(teacher, data.train.sample_shape(), 1);
        spikeforge::OptimizerConfig oc;
        oc.kind = spikeforge::OptimizerConfig::Kind::Adam;
        oc.learning_rate = 0.01;
        spikeforge::Optimizer<double> opt(net.parameters(), oc);
        for (int epoch = 0; epoch < 20; ++epoch) {
            for (const auto& idx : spikeforge::batch_plan(data.train.size(), 64, epoch, true)) {
                auto [images, labels] = spikeforge::gather_batch(data.train, idx);
                spikeforge::Graph<double> g;
                spikeforge::RecordScope<double> scope(g);
                auto loss = spikeforge::cross_entropy(net.forward_teacher(images), labels);
                opt.zero_grad();
                g.backward(loss);
                opt.step();
            }
        }
        const double acc = spikeforge::evaluate_teacher_accuracy(net, data.test, 64);
        CHECK(acc >= 0.95);
    }
}

TEST_CASE("batch plan") {
    SUBCASE("N=10, batch 4 -> sizes 4,4,2") {
        auto plan = spikeforge::batch_plan(10, 4, 0, false);
        REQUIRE(plan.size() == 3);
        CHECK(plan[0].size() == 4);
        CHECK(plan[1].size() == 4);
        CHECK(plan[2].size() == 2);
    }
    SUBCASE("no shuffle keeps original order") {
        auto plan = spikeforge::batch_plan(5, 2, 123, false);
        CHECK(plan[0] == std::vector<std::int64_t>{0, 1});
        CHECK(plan[2] == std::vector<std::int64_t>{4});
    }
    SUBCASE("same seed, same permutation; different seed differs") {
        auto a = spikeforge::batch_plan(64, 16, 9, true);
        auto b = spikeforge::batch_plan(64, 16, 9, true);
        CHECK(a == b);
        auto c = spikeforge::batch_plan(64, 16, 10, true);
        CHECK(a != c);
        // Shuffling is a permutation: all indices appear exactly once.
        std::vector<int> seen(64, 0);
        for (const auto& batch : a) {
            for (auto i : batch) seen[static_cast<std::size_t>(i)] += 1;
        }
        for (int s : seen) CHECK(s == 1);
    }
    SUBCASE("invalid batch size rejected") {
        CHECK_THROWS_AS(spikeforge::batch_plan(5, 0, 0, false), std::invalid_argument);
    }
}

TEST_CASE("gather_batch pulls the right samples") {
    auto ds = tiny_dataset();
    auto [images, labels] = spikeforge::gather_batch(ds, {1});
    CHECK(labels == std::vector<int>{1});
    CHECK(images.dim(0) == 1);
    CHECK(images.data()[0] == ds.images.data()[4]);
}

TEST_CASE("MNIST loads when present: N=60000, 1x28x28, 10 classes") {
    const char* env = std::getenv("SPIKEFORGE_MNIST_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path("/root/data/mnist");
    if (!fs::exists(dir / "train-images-idx3-ubyte")) {
        MESSAGE("MNIST not present under ", dir.string(), "; skipping");
        return;
    }
    auto train = spikeforge::load_idx<float>((dir / "train-images-idx3-ubyte").string(),
                                             (dir / "train-labels-idx1-ubyte").string());
    CHECK(train.size() == 60000);
    CHECK(train.images.shape() == spikeforge::Shape{60000, 1, 28, 28});
    CHECK(train.classes == 10);
    auto test = spikeforge::load_idx<float>((dir / "t10k-images-idx3-ubyte").string(),
                                            (dir / "t10k-labels-idx1-ubyte").string());
    CHECK(test.size() == 10000);
    for (float v : test.images.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            FAIL("pixel out of range");
            break;
        }
    }
}
