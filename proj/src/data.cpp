#include "spikeforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace spikeforge {

template <typename T>
Shape Dataset<T>::sample_shape() const {
    const Shape& s = images.shape();
    return Shape(s.begin() + 1, s.end());
}

template <typename T>
void Dataset<T>::validate() const {
    if (!images.defined() || images.rank() != 4) {
        throw std::invalid_argument("dataset: images must be [N,C,H,W]");
    }
    if (images.dim(0) != static_cast<std::int64_t>(labels.size())) {
        throw std::invalid_argument("dataset: " + std::to_string(images.dim(0)) + " images but " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (classes < 2) throw std::invalid_argument("dataset: needs at least 2 classes");
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
        }
    }
    for (T v : images.data()) {
        if (!(v >= T(0) && v <= T(1))) {
            throw std::invalid_argument("dataset: pixel value out of [0,1]");
        }
    }
}

template <typename T>
Dataset<T> Dataset<T>::head(std::int64_t n) const {
    if (n <= 0 || n >= size()) return *this;
    Shape s = images.shape();
    s[0] = n;
    const std::int64_t per = numel(sample_shape());
    std::vector<T> vals(images.data().begin(), images.data().begin() + n * per);
    Dataset<T> out;
    out.images = Tensor<T>::from_data(std::move(s), std::move(vals));
    out.labels.assign(labels.begin(), labels.begin() + n);
    out.classes = classes;
    return out;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("idx: truncated header in " + path);
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path, int classes) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("idx: cannot open " + images_path);
    const std::uint32_t img_magic = read_be32(imgs, images_path);
    if (img_magic != kImagesMagic) {
        throw std::runtime_error("idx: bad magic in " + images_path + " (expected 0x00000803)");
    }
    const std::uint32_t n = read_be32(imgs, images_path);
    const std::uint32_t rows = read_be32(imgs, images_path);
    const std::uint32_t cols = read_be32(imgs, images_path);

    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw std::runtime_error("idx: cannot open " + labels_path);
    const std::uint32_t lbl_magic = read_be32(lbls, labels_path);
    if (lbl_magic != kLabelsMagic) {
        throw std::runtime_error("idx: bad magic in " + labels_path + " (expected 0x00000801)");
    }
    const std::uint32_t n_labels = read_be32(lbls, labels_path);
    if (n != n_labels) {
        throw std::runtime_error("idx: image count " + std::to_string(n) + " in " + images_path +
                                 " does not match label count " + std::to_string(n_labels) +
                                 " in " + labels_path);
    }

    const std::size_t pixels = std::size_t(n) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels))) {
        throw std::runtime_error("idx: truncated image payload in " + images_path);
    }
    std::vector<unsigned char> raw_labels(n);
    if (!lbls.read(reinterpret_cast<char*>(raw_labels.data()), n)) {
        throw std::runtime_error("idx: truncated label payload in " + labels_path);
    }

    Dataset<T> ds;
    ds.classes = classes;
    std::vector<T> vals(pixels);
    const T inv = T(1) / T(255);
    for (std::size_t i = 0; i < pixels; ++i) vals[i] = static_cast<T>(raw[i]) * inv;
    ds.images = Tensor<T>::from_data({std::int64_t(n), 1, std::int64_t(rows), std::int64_t(cols)},
                                     std::move(vals));
    ds.labels.reserve(n);
    for (unsigned char y : raw_labels) {
        if (y >= classes) {
            throw std::runtime_error("idx: label " + std::to_string(int(y)) + " in " + labels_path +
                                     " exceeds class count " + std::to_string(classes));
        }
        ds.labels.push_back(static_cast<int>(y));
    }
    return ds;
}

template <typename T>
void save_idx(const std::string& images_path, const std::string& labels_path,
              const Dataset<T>& ds) {
    if (!ds.images.defined() || ds.images.rank() != 4 || ds.images.dim(1) != 1) {
        throw std::invalid_argument("idx: can only write [N,1,H,W] datasets");
    }
    const std::int64_t n = ds.images.dim(0), h = ds.images.dim(2), w = ds.images.dim(3);
    std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
    if (!imgs) throw std::runtime_error("idx: cannot open for writing " + images_path);
    write_be32(imgs, kImagesMagic);
    write_be32(imgs, static_cast<std::uint32_t>(n));
    write_be32(imgs, static_cast<std::uint32_t>(h));
    write_be32(imgs, static_cast<std::uint32_t>(w));
    std::vector<unsigned char> raw(static_cast<std::size_t>(n * h * w));
    auto vals = ds.images.data();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<unsigned char>(std::lround(static_cast<double>(vals[i]) * 255.0));
    }
    imgs.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!imgs) throw std::runtime_error("idx: write failed: " + images_path);

    std::ofstream lbls(labels_path, std::ios::binary | std::ios::trunc);
    if (!lbls) throw std::runtime_error("idx: cannot open for writing " + labels_path);
    write_be32(lbls, kLabelsMagic);
    write_be32(lbls, static_cast<std::uint32_t>(n));
    for (int y : ds.labels) lbls.put(static_cast<char>(y));
    if (!lbls) throw std::runtime_error("idx: write failed: " + labels_path);
}

template <typename T>
Dataset<T> synth_blobs(int classes, int per_class, int dims, std::uint64_t seed, double spread) {
    if (classes < 2) throw std::invalid_argument("synth_blobs: classes must be >= 2");
    if (dims < 2) throw std::invalid_argument("synth_blobs: dims must be >= 2");
    if (per_class < 1) throw std::invalid_argument("synth_blobs: per_class must be >= 1");
    const std::int64_t n = std::int64_t(classes) * per_class;
    std::vector<T> vals(static_cast<std::size_t>(n) * dims);
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::mt19937_64 rng(derive_seed(seed, 0));
    std::normal_distribution<double> noise(0.0, 1.0);
    // Class means sit on a circle in the first two coordinates; remaining
    // coordinates are centered. Values are squashed into [0, 1].
    const double pi = 3.14159265358979323846;
    std::size_t idx = 0;
    for (int c = 0; c < classes; ++c) {
        const double angle = 2.0 * pi * c / classes;
        for (int s = 0; s < per_class; ++s) {
            labels[idx / dims] = c;
            for (int d = 0; d < dims; ++d) {
                double mu = 0.0;
                if (d == 0) mu = std::cos(angle);
                if (d == 1) mu = std::sin(angle);
                const double raw = mu + spread * noise(rng);
                vals[idx++] = static_cast<T>(std::clamp(0.5 + raw / 4.0, 0.0, 1.0));
            }
        }
    }
    Dataset<T> ds;
    ds.classes = classes;
    ds.images = Tensor<T>::from_data({n, 1, 1, dims}, std::move(vals));
    ds.labels = std::move(labels);
    return ds;
}

std::vector<std::vector<std::int64_t>> batch_plan(std::int64_t n, std::int64_t batch_size,
                                                  std::uint64_t seed, bool shuffle) {
    if (batch_size < 1) throw std::invalid_argument("batch_plan: batch_size must be >= 1");
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    if (shuffle) {
        std::mt19937_64 rng(seed);
        for (std::int64_t i = n - 1; i > 0; --i) {
            const std::int64_t j =
                static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
    }
    std::vector<std::vector<std::int64_t>> plan;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t end = std::min(n, start + batch_size);
        plan.emplace_back(order.begin() + start, order.begin() + end);
    }
    return plan;
}

template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather_batch(const Dataset<T>& ds,
                                                    const std::vector<std::int64_t>& indices) {
    const std::int64_t per = numel(ds.sample_shape());
    Shape s = ds.images.shape();
    s[0] = static_cast<std::int64_t>(indices.size());
    std::vector<T> vals(static_cast<std::size_t>(s[0] * per));
    std::vector<int> labels(indices.size());
    auto src = ds.images.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::memcpy(vals.data() + i * static_cast<std::size_t>(per),
                    src.data() + indices[i] * per, sizeof(T) * static_cast<std::size_t>(per));
        labels[i] = ds.labels[static_cast<std::size_t>(indices[i])];
    }
    return {Tensor<T>::from_data(std::move(s), std::move(vals)), std::move(labels)};
}

#define SPIKEFORGE_DATA_INSTANTIATE(T)                                                        \
    template struct Dataset<T>;                                                               \
    template Dataset<T> load_idx<T>(const std::string&, const std::string&, int);             \
    template void save_idx<T>(const std::string&, const std::string&, const Dataset<T>&);     \
    template Dataset<T> synth_blobs<T>(int, int, int, std::uint64_t, double);                 \
    template std::pair<Tensor<T>, std::vector<int>> gather_batch<T>(                          \
        const Dataset<T>&, const std::vector<std::int64_t>&);

SPIKEFORGE_DATA_INSTANTIATE(float)
SPIKEFORGE_DATA_INSTANTIATE(double)
#undef SPIKEFORGE_DATA_INSTANTIATE

}  // namespace spikeforge
